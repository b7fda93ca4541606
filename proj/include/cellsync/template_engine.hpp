#pragma once

#include <map>
#include <optional>
#include <regex>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace cellsync {

/// Character class of a template blank. Each kind has a fixed pattern
/// (see kind_pattern) that both validates bound values and drives the
/// recognizer compiled from a template.
enum class BlankKind {
  Ident,       // [A-Za-z_][A-Za-z0-9_]*
  ColName,     // bare identifier or "double-quoted"
  Number,      // -?digits[.digits][e[+-]digits]
  String,      // "..." with backslash escapes
  Comparison,  // < <= > >= == !=
  Expr,        // comparison, optional single space, number or string
  Index,       // digits
};

enum class BlankSource { ActionData, EnvResolved };

std::string_view to_string(BlankKind kind);
std::string_view to_string(BlankSource source);
std::optional<BlankKind> parse_blank_kind(std::string_view text);
std::optional<BlankSource> parse_blank_source(std::string_view text);

/// ECMAScript pattern for a kind. Uses only non-capturing groups.
const std::string& kind_pattern(BlankKind kind);
bool matches_kind(BlankKind kind, std::string_view value);

struct BlankSpec {
  std::string name;
  BlankKind kind = BlankKind::Ident;
  BlankSource source = BlankSource::ActionData;

  bool operator==(const BlankSpec&) const = default;
};

using BindingSet = std::map<std::string, std::string>;

struct TemplateSpec {
  struct BlankRef {
    std::size_t blank;  // index into blanks
    bool operator==(const BlankRef&) const = default;
  };
  using Segment = std::variant<std::string, BlankRef>;

  std::string template_id;
  std::string action_name;
  std::string dialect;
  std::string body;  // as written, `$$` escapes intact
  std::vector<BlankSpec> blanks;
  std::vector<Segment> segments;

  const BlankSpec* find_blank(std::string_view name) const;
  std::size_t occurrences() const;
};

struct TemplateVariantSet {
  std::string action_name;
  std::string required_var_type;  // empty accepts any type
  std::vector<TemplateSpec> variants;
};

/// Parses `#template <id> <action> <dialect> <NAME:KIND:SOURCE>...` followed
/// by exactly one body line.
TemplateSpec parse_template(std::string_view source);

/// Builds a TemplateSpec from already-split header fields and a body line.
TemplateSpec make_template(std::string template_id, std::string action_name, std::string dialect,
                           std::vector<BlankSpec> blanks, std::string_view body);

std::string instantiate(const TemplateSpec& t, const BindingSet& bindings);

class Recognizer {
 public:
  explicit Recognizer(const TemplateSpec& t);

  const std::string& template_id() const { return template_id_; }
  const std::string& action_name() const { return action_name_; }
  const std::string& pattern() const { return pattern_; }

  /// Matches an already whitespace-normalized line.
  std::optional<BindingSet> match_normalized(const std::string& line) const;
  std::optional<BindingSet> match(std::string_view line) const;

 private:
  std::string template_id_;
  std::string action_name_;
  std::string pattern_;
  std::regex regex_;
  std::vector<std::string> group_names_;
};

Recognizer compile_recognizer(const TemplateSpec& t);

struct Recognition {
  std::string template_id;
  std::string action_name;
  BindingSet bindings;
};

/// First matching recognizer in list order, or nullopt.
std::optional<Recognition> recognize_line(std::span<const Recognizer> recognizers,
                                          std::string_view line);

/// Collapses runs of spaces/tabs outside double-quoted strings to one space
/// and trims both ends.
std::string normalize_whitespace(std::string_view line);

const TemplateSpec& select_variant(const TemplateVariantSet& set, std::string_view var_type,
                                   std::string_view session_dialect,
                                   std::string_view type_error_message = {});

}  // namespace cellsync

#include "cellsync/template_engine.hpp"

#include "cellsync/error.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <sstream>

namespace cellsync {

namespace {

const std::string kIdent = "[A-Za-z_][A-Za-z0-9_]*";
const std::string kNumber = "-?[0-9]+(?:\\.[0-9]+)?(?:[eE][+-]?[0-9]+)?";
const std::string kString = "\"(?:[^\"\\\\]|\\\\.)*\"";
const std::string kComparison = "(?:<=|>=|==|!=|<|>)";

bool is_blank_name_start(char c) { return c >= 'A' && c <= 'Z'; }
bool is_blank_name_char(char c) { return is_blank_name_start(c) || (c >= '0' && c <= '9') || c == '_'; }

std::string regex_escape(std::string_view text) {
  static const std::string special = "^$\\.*+?()[]{}|";
  std::string out;
  out.reserve(text.size() * 2);
  for (char c : text) {
    if (special.find(c) != std::string::npos) out += '\\';
    out += c;
  }
  return out;
}

std::string collapse_blanks(std::string_view text) {
  std::string out;
  bool in_run = false;
  for (char c : text) {
    if (c == ' ' || c == '\t') {
      if (!in_run) out += ' ';
      in_run = true;
    } else {
      out += c;
      in_run = false;
    }
  }
  return out;
}

std::vector<std::string> split_ws(std::string_view text) {
  std::vector<std::string> out;
  std::istringstream in{std::string(text)};
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

}  // namespace

std::string_view to_string(BlankKind kind) {
  switch (kind) {
    case BlankKind::Ident: return "IDENT";
    case BlankKind::ColName: return "COLNAME";
    case BlankKind::Number: return "NUMBER";
    case BlankKind::String: return "STRING";
    case BlankKind::Comparison: return "COMPARISON";
    case BlankKind::Expr: return "EXPR";
    case BlankKind::Index: return "INDEX";
  }
  return "?";
}

std::string_view to_string(BlankSource source) {
  return source == BlankSource::EnvResolved ? "ENV" : "ACTION";
}

std::optional<BlankKind> parse_blank_kind(std::string_view text) {
  for (auto k : {BlankKind::Ident, BlankKind::ColName, BlankKind::Number, BlankKind::String,
                 BlankKind::Comparison, BlankKind::Expr, BlankKind::Index}) {
    if (to_string(k) == text) return k;
  }
  return std::nullopt;
}

std::optional<BlankSource> parse_blank_source(std::string_view text) {
  if (text == "ENV" || text == "ENV_RESOLVED") return BlankSource::EnvResolved;
  if (text == "ACTION" || text == "ACTION_DATA") return BlankSource::ActionData;
  return std::nullopt;
}

const std::string& kind_pattern(BlankKind kind) {
  static const std::string ident = kIdent;
  static const std::string colname = "(?:" + kIdent + "|" + kString + ")";
  static const std::string number = kNumber;
  static const std::string string = kString;
  static const std::string comparison = kComparison;
  static const std::string expr = kComparison + " ?(?:" + kNumber + "|" + kString + ")";
  static const std::string index = "[0-9]+";
  switch (kind) {
    case BlankKind::Ident: return ident;
    case BlankKind::ColName: return colname;
    case BlankKind::Number: return number;
    case BlankKind::String: return string;
    case BlankKind::Comparison: return comparison;
    case BlankKind::Expr: return expr;
    case BlankKind::Index: return index;
  }
  return ident;
}

bool matches_kind(BlankKind kind, std::string_view value) {
  static const auto compiled = [] {
    std::vector<std::regex> out;
    for (int k = 0; k <= static_cast<int>(BlankKind::Index); ++k)
      out.emplace_back(kind_pattern(static_cast<BlankKind>(k)));
    return out;
  }();
  return std::regex_match(value.begin(), value.end(), compiled[static_cast<int>(kind)]);
}

const BlankSpec* TemplateSpec::find_blank(std::string_view name) const {
  for (const auto& b : blanks)
    if (b.name == name) return &b;
  return nullptr;
}

std::size_t TemplateSpec::occurrences() const {
  return static_cast<std::size_t>(std::count_if(segments.begin(), segments.end(), [](const Segment& s) {
    return std::holds_alternative<BlankRef>(s);
  }));
}

TemplateSpec make_template(std::string template_id, std::string action_name, std::string dialect,
                           std::vector<BlankSpec> blanks, std::string_view body) {
  if (body.find('\n') != std::string_view::npos || body.find('\r') != std::string_view::npos)
    throw Error(ErrorCode::MultilineBody, "template '" + template_id + "' body spans several lines");

  std::set<std::string> seen;
  for (const auto& b : blanks) {
    if (b.name.empty() || !is_blank_name_start(b.name[0]) ||
        !std::all_of(b.name.begin(), b.name.end(), is_blank_name_char))
      throw Error(ErrorCode::InvalidBlank, "blank name '" + b.name + "' must be an uppercase identifier");
    if (!seen.insert(b.name).second)
      throw Error(ErrorCode::DuplicateBlank, "blank '" + b.name + "' declared twice");
    if (b.source == BlankSource::EnvResolved && b.kind != BlankKind::Ident)
      throw Error(ErrorCode::InvalidBlank, "environment-resolved blank '" + b.name + "' must be IDENT");
  }

  TemplateSpec t;
  t.template_id = std::move(template_id);
  t.action_name = std::move(action_name);
  t.dialect = std::move(dialect);
  t.body = std::string(body);
  t.blanks = std::move(blanks);

  std::vector<bool> used(t.blanks.size(), false);
  std::string literal;
  for (std::size_t i = 0; i < body.size();) {
    if (body[i] != '$') {
      literal += body[i++];
      continue;
    }
    if (i + 1 < body.size() && body[i + 1] == '$') {
      literal += '$';
      i += 2;
      continue;
    }
    std::size_t j = i + 1;
    while (j < body.size() && is_blank_name_char(body[j])) ++j;
    if (j == i + 1 || !is_blank_name_start(body[i + 1]))
      throw Error(ErrorCode::TemplateSyntax,
                  "template '" + t.template_id + "': a literal '$' must be written as '$$'");
    std::string name(body.substr(i + 1, j - i - 1));
    auto it = std::find_if(t.blanks.begin(), t.blanks.end(), [&](const BlankSpec& b) { return b.name == name; });
    if (it == t.blanks.end())
      throw Error(ErrorCode::UndeclaredBlank, "template '" + t.template_id + "' uses undeclared blank $" + name);
    if (!literal.empty()) t.segments.emplace_back(std::move(literal));
    literal.clear();
    auto idx = static_cast<std::size_t>(it - t.blanks.begin());
    used[idx] = true;
    t.segments.emplace_back(TemplateSpec::BlankRef{idx});
    i = j;
  }
  if (!literal.empty()) t.segments.emplace_back(std::move(literal));

  for (std::size_t k = 0; k < used.size(); ++k)
    if (!used[k])
      throw Error(ErrorCode::UnusedBlank, "template '" + t.template_id + "' never uses blank $" + t.blanks[k].name);
  return t;
}

TemplateSpec parse_template(std::string_view source) {
  std::string text(source);
  if (!text.empty() && text.back() == '\n') text.pop_back();
  auto nl = text.find('\n');
  if (nl == std::string::npos) throw Error(ErrorCode::TemplateSyntax, "template needs a header line and a body line");
  std::string header = text.substr(0, nl);
  std::string body = text.substr(nl + 1);
  if (!body.empty() && body.back() == '\r') body.pop_back();
  if (!header.empty() && header.back() == '\r') header.pop_back();

  auto fields = split_ws(header);
  if (fields.size() < 4 || fields[0] != "#template")
    throw Error(ErrorCode::TemplateSyntax, "expected '#template <id> <action> <dialect> <NAME:KIND:SOURCE>...'");

  std::vector<BlankSpec> blanks;
  for (std::size_t i = 4; i < fields.size(); ++i) {
    const std::string& decl = fields[i];
    auto c1 = decl.find(':');
    if (c1 == std::string::npos) throw Error(ErrorCode::TemplateSyntax, "blank declaration '" + decl + "' lacks a kind");
    auto c2 = decl.find(':', c1 + 1);
    BlankSpec b;
    b.name = decl.substr(0, c1);
    std::string kind = decl.substr(c1 + 1, c2 == std::string::npos ? std::string::npos : c2 - c1 - 1);
    auto k = parse_blank_kind(kind);
    if (!k) throw Error(ErrorCode::InvalidBlank, "unknown blank kind '" + kind + "'");
    b.kind = *k;
    if (c2 != std::string::npos) {
      auto s = parse_blank_source(decl.substr(c2 + 1));
      if (!s) throw Error(ErrorCode::InvalidBlank, "unknown blank source in '" + decl + "'");
      b.source = *s;
    }
    blanks.push_back(std::move(b));
  }
  return make_template(fields[1], fields[2], fields[3], std::move(blanks), body);
}

std::string instantiate(const TemplateSpec& t, const BindingSet& bindings) {
  for (const auto& [name, value] : bindings)
    if (!t.find_blank(name))
      throw Error(ErrorCode::UnknownBlank, "template '" + t.template_id + "' has no blank $" + name);
  for (const auto& b : t.blanks) {
    auto it = bindings.find(b.name);
    if (it == bindings.end())
      throw Error(ErrorCode::MissingBinding, "no value bound for $" + b.name + " in template '" + t.template_id + "'");
    if (!matches_kind(b.kind, it->second))
      throw Error(ErrorCode::KindMismatch, "value '" + it->second + "' is not a valid " +
                                               std::string(to_string(b.kind)) + " for $" + b.name);
  }
  std::string out;
  for (const auto& seg : t.segments) {
    if (const auto* lit = std::get_if<std::string>(&seg)) {
      out += *lit;
    } else {
      out += bindings.at(t.blanks[std::get<TemplateSpec::BlankRef>(seg).blank].name);
    }
  }
  return out;
}

std::string normalize_whitespace(std::string_view line) {
  std::string out;
  out.reserve(line.size());
  bool in_string = false;
  bool escaped = false;
  bool pending_space = false;
  for (char c : line) {
    if (in_string) {
      out += c;
      if (escaped) {
        escaped = false;
      } else if (c == '\\') {
        escaped = true;
      } else if (c == '"') {
        in_string = false;
      }
      continue;
    }
    if (c == ' ' || c == '\t' || c == '\r') {
      pending_space = true;
      continue;
    }
    if (pending_space && !out.empty()) out += ' ';
    pending_space = false;
    out += c;
    if (c == '"') in_string = true;
  }
  return out;
}

Recognizer::Recognizer(const TemplateSpec& t) : template_id_(t.template_id), action_name_(t.action_name) {
  std::vector<int> group_of(t.blanks.size(), 0);
  std::string pattern;
  int groups = 0;
  for (std::size_t i = 0; i < t.segments.size(); ++i) {
    const auto& seg = t.segments[i];
    if (const auto* lit = std::get_if<std::string>(&seg)) {
      std::string text = collapse_blanks(*lit);
      if (i == 0 && !text.empty() && text.front() == ' ') text.erase(0, 1);
      if (i + 1 == t.segments.size() && !text.empty() && text.back() == ' ') text.pop_back();
      pattern += regex_escape(text);
      continue;
    }
    std::size_t blank = std::get<TemplateSpec::BlankRef>(seg).blank;
    if (group_of[blank] == 0) {
      group_of[blank] = ++groups;
      group_names_.push_back(t.blanks[blank].name);
      pattern += "(" + kind_pattern(t.blanks[blank].kind) + ")";
    } else {
      pattern += "(?:\\" + std::to_string(group_of[blank]) + ")";
    }
  }
  pattern_ = std::move(pattern);
  regex_ = std::regex(pattern_, std::regex::ECMAScript);
}

std::optional<BindingSet> Recognizer::match_normalized(const std::string& line) const {
  std::smatch m;
  if (!std::regex_match(line, m, regex_)) return std::nullopt;
  BindingSet out;
  for (std::size_t g = 0; g < group_names_.size(); ++g) out[group_names_[g]] = m[g + 1].str();
  return out;
}

std::optional<BindingSet> Recognizer::match(std::string_view line) const {
  return match_normalized(normalize_whitespace(line));
}

Recognizer compile_recognizer(const TemplateSpec& t) { return Recognizer(t); }

std::optional<Recognition> recognize_line(std::span<const Recognizer> recognizers, std::string_view line) {
  std::string normalized = normalize_whitespace(line);
  if (normalized.empty()) return std::nullopt;
  for (const auto& r : recognizers) {
    if (auto b = r.match_normalized(normalized)) return Recognition{r.template_id(), r.action_name(), std::move(*b)};
  }
  return std::nullopt;
}

const TemplateSpec& select_variant(const TemplateVariantSet& set, std::string_view var_type,
                                   std::string_view session_dialect, std::string_view type_error_message) {
  const TemplateSpec* chosen = nullptr;
  for (const auto& v : set.variants)
    if (v.dialect == session_dialect) chosen = &v;
  if (!chosen)
    throw Error(ErrorCode::NoVariantForDialect,
                "action '" + set.action_name + "' has no template for dialect '" + std::string(session_dialect) + "'");
  if (!set.required_var_type.empty() && set.required_var_type != var_type) {
    std::string msg = "action '" + set.action_name + "' needs a '" + set.required_var_type + "' variable, got '" +
                      std::string(var_type) + "'";
    std::optional<std::string> tool_msg;
    if (!type_error_message.empty()) tool_msg = std::string(type_error_message);
    throw Error(ErrorCode::TypeCheckFailed, msg, tool_msg);
  }
  return *chosen;
}

}  // namespace cellsync

#pragma once

#include "cellsync/template_engine.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace cellsync {

struct ParamSpec {
  std::string name;
  std::vector<std::string> accepted_types;
};

/// A drag-bin destination. When `tool` is set the selection lands in a new
/// cell that invokes that tool on the selection variable.
struct SelectionTarget {
  std::string name;
  std::optional<std::string> tool;
  std::vector<TemplateVariantSet> packs;

  const TemplateVariantSet* find_action(std::string_view action) const;
};

/// Code run on a sandboxed copy of a tool's input before delivery. The body
/// reads the input through the `$IN` blank and leaves its result in
/// `output_var`.
struct Preprocess {
  std::string id;
  TemplateSpec code;
  std::string output_var;
};

struct ToolRegistration {
  std::string tool_name;
  std::vector<ParamSpec> params;
  std::optional<std::string> preprocess_id;
  std::vector<TemplateVariantSet> packs;
  std::string view_id;
  std::vector<SelectionTarget> selection_targets;
  std::optional<std::string> state_model;  // opts the tool into compact rewriting
  std::string type_error_message;

  const TemplateVariantSet* find_action(std::string_view action) const;
  const SelectionTarget* find_target(std::string_view name) const;
};

struct PackFile {
  std::vector<ToolRegistration> tools;
  std::vector<Preprocess> preprocesses;
};

/// Pack file grammar, one directive per line:
///   #tool <name> view=<id> [state=<model>] [preprocess=<id>]
///   #param <name> <type>[,<type>...]
///   #message <tool-specific type error text>
///   #target "<name>" [tool=<tool>]
///   #vartype <type-tag>
///   #template <id> <action> <dialect> <NAME:KIND:SOURCE>...   (next line is the body)
///   #preprocess <id> <output-var>                             (next line is the body)
/// Lines starting with "# " and blank lines are ignored.
PackFile parse_pack(std::string_view text, std::string_view origin = "<pack>");

/// Loads every *.pack file of a directory in filename order.
PackFile load_pack_dir(const std::filesystem::path& dir);

/// The packs shipped with the engine (table, plot, image, slider).
const PackFile& canonical_packs();

/// Recognizers for every variant of every action, in pack order.
std::vector<Recognizer> tool_recognizers(const ToolRegistration& tool);

/// Throws InvalidPack when a variant set is empty or has two variants for one dialect.
void validate_variant_sets(const std::vector<TemplateVariantSet>& sets, std::string_view owner);

}  // namespace cellsync

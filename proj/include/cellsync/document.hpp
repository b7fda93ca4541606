#pragma once

#include "cellsync/template_engine.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace cellsync {

struct Provenance {
  enum class Kind { Generated, User, Frozen };

  Kind kind = Kind::User;
  // Set only for Generated lines.
  std::string tool_instance;
  std::int64_t action_seq = 0;
  std::string template_id;

  static Provenance generated(std::string tool_instance, std::int64_t seq, std::string template_id);
  static Provenance user() { return {}; }
  static Provenance frozen() { return {Kind::Frozen, {}, 0, {}}; }

  bool is_generated() const { return kind == Kind::Generated; }
  bool operator==(const Provenance&) const = default;
};

struct LineRecord {
  std::string text;
  Provenance prov;

  bool operator==(const LineRecord&) const = default;
};

/// `%%mage <tool> <ident>...`
struct Invocation {
  std::string tool_name;
  std::vector<std::string> args;

  bool operator==(const Invocation&) const = default;
};

Invocation parse_invocation(std::string_view line0);

struct Cell {
  std::string id;
  std::vector<LineRecord> lines;

  /// Parsed line 0, or nullopt when line 0 is not an invocation. A malformed
  /// invocation (non-identifier argument) still throws.
  std::optional<Invocation> invocation() const;
  std::string text() const;
  std::vector<std::string> texts() const;

  bool operator==(const Cell&) const = default;
};

/// Splits cell text into lines. A single trailing newline does not start an
/// extra empty line, and a trailing '\r' is dropped from each line.
std::vector<std::string> split_lines(std::string_view text);

/// New cell whose lines all carry User provenance.
Cell make_cell(std::string id, std::string_view text);

struct Notebook {
  int version = 1;
  std::vector<Cell> cells;

  Cell* find(std::string_view id);
  const Cell* find(std::string_view id) const;
  std::optional<std::size_t> index_of(std::string_view id) const;

  bool operator==(const Notebook&) const = default;
};

/// Half-open line index range.
struct LineSpan {
  std::size_t begin = 0;
  std::size_t end = 0;

  bool empty() const { return begin == end; }
  std::size_t size() const { return end - begin; }
  bool contains(std::size_t i) const { return i >= begin && i < end; }
  bool operator==(const LineSpan&) const = default;
};

/// Generated lines after the last User or Frozen line (line 0 counts as the
/// boundary when there is none). Always extends to the end of the cell.
LineSpan writable_region(const Cell& cell);

/// Appends a Generated line at the end of the writable region. The sequence
/// number must exceed every seq the same instance already has in the cell.
Cell insert_generated(const Cell& cell, std::string line_text, Provenance prov);

struct ReconcileContext {
  std::string tool_instance;
  std::int64_t next_seq = 1;
};

struct ActionUpdate {
  std::int64_t seq = 0;
  std::string template_id;
  std::string action_name;
  BindingSet bindings;
  std::size_t line = 0;

  bool operator==(const ActionUpdate&) const = default;
};

struct ReconcileReport {
  std::vector<ActionUpdate> updated_actions;
  std::vector<std::int64_t> removed_actions;
  // Recognized lines typed by the user, given fresh sequence numbers.
  std::vector<ActionUpdate> added_actions;
  std::optional<std::size_t> new_freeze_boundary;
  std::vector<std::size_t> newly_frozen;
  bool refresh_only = false;
  std::int64_t next_seq = 1;

  bool empty() const {
    return updated_actions.empty() && removed_actions.empty() && added_actions.empty() && !new_freeze_boundary &&
           newly_frozen.empty() && !refresh_only;
  }
};

/// Reconciles a full replacement text against the cell. Lines are aligned by
/// longest common subsequence on exact text; within each differing hunk,
/// removed and added lines pair up positionally as edits.
std::pair<Cell, ReconcileReport> reconcile_edit(const Cell& before, std::string_view new_text,
                                                std::span<const Recognizer> recognizers,
                                                const ReconcileContext& ctx);

struct TemplateUse {
  const TemplateSpec* spec = nullptr;
  BindingSet bindings;
};

/// Replaces the writable region with the instantiated templates, numbering
/// them first_seq, first_seq + 1, ...
Cell rewrite_writable(const Cell& cell, std::span<const TemplateUse> final_templates,
                      const std::string& tool_instance, std::int64_t first_seq);

/// {"id":..., "lines":[{"text":..., "prov":{"kind":...}}]}, as stored on disk.
nlohmann::json cell_to_json(const Cell& cell);

std::string save_notebook(const Notebook& nb);
Notebook load_notebook(std::string_view bytes);

}  // namespace cellsync

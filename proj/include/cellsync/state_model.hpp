#pragma once

#include "cellsync/snapshot.hpp"
#include "cellsync/template_engine.hpp"

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace cellsync {

/// One tool action with its ACTION_DATA bindings only.
struct PlannedAction {
  std::string action_name;
  BindingSet bindings;

  bool operator==(const PlannedAction&) const = default;
};

/// A tool's compact view of its own history. fold() turns the actions of a
/// writable region (plus the new one) into a shortest equivalent list.
class StateModel {
 public:
  virtual ~StateModel() = default;

  /// nullopt when the sequence cannot be compacted (or would fail when run);
  /// the caller then falls back to appending.
  virtual std::optional<std::vector<PlannedAction>> fold(const VariableSnapshot& base,
                                                         std::span<const PlannedAction> actions) const = 0;
};

/// nullptr for an unknown model name. Known: "table".
std::unique_ptr<StateModel> make_state_model(std::string_view name);

/// Table model. Emits, in order: drops of original columns no filter needs,
/// moves of moved original columns, inserts of surviving inserted columns at
/// their final index, inserts of filtered-then-dropped columns, filters
/// (deduplicated), then the remaining drops. Every emitted line belongs to a
/// distinct state key, so the result is never longer than the number of
/// distinct (kind, column[, expr]) keys the history touched.
class TableStateModel : public StateModel {
 public:
  std::optional<std::vector<PlannedAction>> fold(const VariableSnapshot& base,
                                                 std::span<const PlannedAction> actions) const override;
};

/// Column name denoted by a COLNAME or STRING binding (quotes and escapes removed).
std::string column_name_of(std::string_view literal);

/// STRING literal for a column name.
std::string quote_string(std::string_view text);

}  // namespace cellsync

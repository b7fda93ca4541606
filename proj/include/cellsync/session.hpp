#pragma once

#include "cellsync/document.hpp"
#include "cellsync/executor.hpp"
#include "cellsync/packs.hpp"
#include "cellsync/state_model.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace cellsync {

struct SessionConfig {
  std::string dialect = "minitable";
  bool compact = true;  // honor tools' state models
};

struct ToolInstance {
  std::string instance_id;  // "<tool>@<cell id>"
  std::string tool_name;
  std::string cell_id;
  std::vector<std::string> args;
  std::string displayed_var;  // args[0]
  std::int64_t next_seq = 1;
  VariableSnapshot data;  // last payload delivered to the tool
};

struct ActionRecord {
  std::string instance_id;
  std::string action_name;
  BindingSet bindings;  // ACTION_DATA blanks only
  std::int64_t seq = 0;
};

struct SyncResult {
  std::string instance_id;
  std::string cell_id;
  std::string cell_text;
  VariableSnapshot snapshot;
  ActionRecord action;
  bool compacted = false;  // the writable region was rewritten from the state model
};

struct ToolNotification {
  enum class Kind { BindingUpdate, ActionRemoved, ActionAdded, DataRefresh, ExecutionError };

  Kind kind = Kind::DataRefresh;
  std::int64_t seq = 0;
  std::string action_name;
  BindingSet bindings;
  std::optional<VariableSnapshot> snapshot;
  std::string message;

  nlohmann::json to_json() const;
};

std::string_view to_string(ToolNotification::Kind kind);

struct EditResult {
  std::string cell_id;
  std::optional<std::string> instance_id;
  ReconcileReport report;
  std::vector<ToolNotification> notifications;
};

/// {column, op, literal value}; value is a JSON number or string.
struct SelectionPredicate {
  std::string column;
  std::string op;
  nlohmann::json value;
};

/// Rows matching any term, where a term is a conjunction of predicates.
struct SelectionSpec {
  std::vector<std::vector<SelectionPredicate>> terms;

  static SelectionSpec from_json(const nlohmann::json& j);
};

struct TransferResult {
  std::string cell_id;
  std::string variable;
  std::optional<std::string> instance_id;  // set when the target names a tool
  VariableSnapshot snapshot;
};

/// One notebook with its tools, instances and executor. Not thread safe;
/// callers serialize access.
class Session {
 public:
  Session(Notebook nb, std::unique_ptr<ExecutorBackend> backend, SessionConfig config = {});

  void register_tool(ToolRegistration reg);
  void register_preprocess(Preprocess pre);
  /// Preprocesses first, then tools.
  void register_pack(const PackFile& pack);

  /// Invokes every cell whose line 0 is an invocation and that has no
  /// instance yet. Returns the failures by cell id instead of throwing.
  std::vector<std::pair<std::string, Error>> auto_invoke();

  const ToolInstance& invoke_tool(const std::string& cell_id);
  /// Appends (or inserts after `after_cell_id`) a new user cell; returns its id.
  std::string add_cell(std::string_view text, std::optional<std::string> after_cell_id = std::nullopt);

  SyncResult handoff(const std::string& instance_id, const std::string& action_name, const BindingSet& data);
  VariableSnapshot get_variable(const std::string& name);
  /// Every variable bound after running the whole notebook, by name.
  std::map<std::string, VariableSnapshot> snapshot_all();
  EditResult on_code_edit(const std::string& cell_id, std::string_view new_text);
  TransferResult transfer_selection(const std::string& instance_id, const SelectionSpec& selection,
                                    const std::string& target_name);

  const Notebook& notebook() const { return nb_; }
  const std::string& dialect() const { return config_.dialect; }
  const ToolRegistration& tool(std::string_view name) const;
  std::vector<const ToolRegistration*> tools() const;
  const ToolInstance& instance(std::string_view instance_id) const;
  const ToolInstance* instance_for_cell(std::string_view cell_id) const;
  std::vector<const ToolInstance*> instances() const;
  ExecutorBackend& backend() { return *backend_; }

 private:
  struct RegisteredTool {
    ToolRegistration reg;
    std::vector<Recognizer> recognizers;
    std::unique_ptr<StateModel> model;
  };

  RegisteredTool& registered(std::string_view name);
  ToolInstance& instance_mut(std::string_view instance_id);
  Cell& cell_mut(std::string_view cell_id);
  ExecutionResult run_prefix(const Notebook& nb, std::string_view through_cell_id);
  /// Executes `nb` with `through` in place of its namesake and snapshots `var`.
  VariableSnapshot run_and_snapshot(const Notebook& nb, const Cell& through, const std::string& var);
  /// Picks the variant and binds ENV blanks to `env_var`.
  TemplateUse resolve_action(const TemplateVariantSet& set, const ToolRegistration& reg, const std::string& var_type,
                             const std::string& env_var, const BindingSet& data) const;
  std::optional<Cell> compact_candidate(const RegisteredTool& tool, const ToolInstance& inst, const Cell& cell,
                                        const std::string& var_type, const PlannedAction& next);
  std::string next_cell_id() const;
  void touched() { ++revision_; }

  Notebook nb_;
  std::unique_ptr<ExecutorBackend> backend_;
  SessionConfig config_;
  std::vector<std::unique_ptr<RegisteredTool>> tools_;
  std::map<std::string, Preprocess, std::less<>> preprocesses_;
  std::map<std::string, ToolInstance, std::less<>> instances_;
  std::int64_t next_selection_ = 1;
  std::uint64_t revision_ = 0;
  std::optional<std::uint64_t> full_run_revision_;  // backend holds the full-notebook env of this revision
};

}  // namespace cellsync

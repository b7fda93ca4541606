#include "cellsync/session.hpp"

#include <algorithm>
#include <regex>
#include <set>

namespace cellsync {

namespace {

[[noreturn]] void execution_failed(const ExecutionResult& r) {
  std::string where = r.cell_id.empty() ? "" : r.cell_id + ":" + std::to_string(r.line) + ": ";
  throw Error(ErrorCode::ExecutionFailed, where + r.error);
}

const TemplateSpec* find_template(const ToolRegistration& reg, std::string_view template_id) {
  for (const auto& set : reg.packs)
    for (const auto& t : set.variants)
      if (t.template_id == template_id) return &t;
  return nullptr;
}

BindingSet action_data_only(const TemplateSpec* spec, const BindingSet& all) {
  if (!spec) return all;
  BindingSet out;
  for (const auto& [k, v] : all) {
    const BlankSpec* b = spec->find_blank(k);
    if (b && b->source == BlankSource::ActionData) out[k] = v;
  }
  return out;
}

bool is_identifier(std::string_view s) {
  return matches_kind(BlankKind::Ident, s);
}

std::string literal_of(const nlohmann::json& v) {
  if (v.is_number()) return format_number(v.get<double>());
  if (v.is_string()) return quote_string(v.get<std::string>());
  throw Error(ErrorCode::InvalidParams, "selection values must be numbers or strings");
}

std::int64_t max_seq(const Cell& cell, std::string_view instance_id) {
  std::int64_t m = 0;
  for (const auto& l : cell.lines)
    if (l.prov.is_generated() && l.prov.tool_instance == instance_id) m = std::max(m, l.prov.action_seq);
  return m;
}

}  // namespace

std::string_view to_string(ToolNotification::Kind kind) {
  switch (kind) {
    case ToolNotification::Kind::BindingUpdate: return "binding-update";
    case ToolNotification::Kind::ActionRemoved: return "action-removed";
    case ToolNotification::Kind::ActionAdded: return "action-added";
    case ToolNotification::Kind::DataRefresh: return "data-refresh";
    case ToolNotification::Kind::ExecutionError: return "execution-error";
  }
  return "unknown";
}

nlohmann::json ToolNotification::to_json() const {
  nlohmann::json j{{"kind", to_string(kind)}};
  switch (kind) {
    case Kind::BindingUpdate:
    case Kind::ActionAdded:
      j["seq"] = seq;
      j["action"] = action_name;
      j["bindings"] = bindings;
      break;
    case Kind::ActionRemoved: j["seq"] = seq; break;
    case Kind::DataRefresh:
      if (snapshot) j["snapshot"] = snapshot->to_json();
      break;
    case Kind::ExecutionError: j["message"] = message; break;
  }
  return j;
}

SelectionSpec SelectionSpec::from_json(const nlohmann::json& j) {
  const nlohmann::json& terms = j.is_object() && j.contains("terms") ? j["terms"] : j;
  if (!terms.is_array()) throw Error(ErrorCode::InvalidParams, "selection must be an array of terms");
  SelectionSpec spec;
  for (const auto& term : terms) {
    if (!term.is_array()) throw Error(ErrorCode::InvalidParams, "selection term must be an array of predicates");
    auto& out = spec.terms.emplace_back();
    for (const auto& p : term) {
      if (!p.is_object() || !p.contains("column") || !p.contains("op") || !p.contains("value") ||
          !p["column"].is_string() || !p["op"].is_string())
        throw Error(ErrorCode::InvalidParams, "predicate needs string column, string op and a value");
      out.push_back({p["column"].get<std::string>(), p["op"].get<std::string>(), p["value"]});
    }
  }
  return spec;
}

Session::Session(Notebook nb, std::unique_ptr<ExecutorBackend> backend, SessionConfig config)
    : nb_(std::move(nb)), backend_(std::move(backend)), config_(std::move(config)) {
  if (!backend_) throw Error(ErrorCode::InvalidParams, "session needs an executor backend");
  static const std::regex sel(R"(\bsel_(\d+)\b)");
  for (const auto& c : nb_.cells)
    for (const auto& l : c.lines)
      for (std::sregex_iterator it(l.text.begin(), l.text.end(), sel), end; it != end; ++it) {
        const std::string digits = (*it)[1].str();
        if (digits.size() < 12) next_selection_ = std::max<std::int64_t>(next_selection_, std::stoll(digits) + 1);
      }
}

void Session::register_tool(ToolRegistration reg) {
  for (const auto& t : tools_)
    if (t->reg.tool_name == reg.tool_name)
      throw Error(ErrorCode::DuplicateToolName, "tool '" + reg.tool_name + "' is already registered");
  if (!is_identifier(reg.tool_name)) throw Error(ErrorCode::InvalidPack, "tool name must be an identifier");
  for (const auto& p : reg.params)
    if (p.name.empty() || p.accepted_types.empty())
      throw Error(ErrorCode::InvalidPack, "tool '" + reg.tool_name + "' has a parameter without a type");
  validate_variant_sets(reg.packs, reg.tool_name);
  for (const auto& target : reg.selection_targets) validate_variant_sets(target.packs, target.name);
  if (reg.preprocess_id && !preprocesses_.count(*reg.preprocess_id))
    throw Error(ErrorCode::InvalidPack, "tool '" + reg.tool_name + "' names unknown preprocess '" +
                                            *reg.preprocess_id + "'");

  auto tool = std::make_unique<RegisteredTool>();
  if (reg.state_model) {
    tool->model = make_state_model(*reg.state_model);
    if (!tool->model) throw Error(ErrorCode::InvalidPack, "unknown state model '" + *reg.state_model + "'");
  }
  tool->recognizers = tool_recognizers(reg);
  tool->reg = std::move(reg);
  tools_.push_back(std::move(tool));
}

void Session::register_preprocess(Preprocess pre) {
  if (preprocesses_.count(pre.id)) throw Error(ErrorCode::InvalidPack, "preprocess '" + pre.id + "' already exists");
  const BlankSpec* in = pre.code.find_blank("IN");
  if (!in || pre.code.blanks.size() != 1)
    throw Error(ErrorCode::InvalidPack, "preprocess '" + pre.id + "' must use exactly the $IN blank");
  if (!is_identifier(pre.output_var))
    throw Error(ErrorCode::InvalidPack, "preprocess '" + pre.id + "' output must be an identifier");
  std::string id = pre.id;
  preprocesses_.emplace(std::move(id), std::move(pre));
}

void Session::register_pack(const PackFile& pack) {
  for (const auto& p : pack.preprocesses) register_preprocess(p);
  for (const auto& t : pack.tools) register_tool(t);
}

Session::RegisteredTool& Session::registered(std::string_view name) {
  for (auto& t : tools_)
    if (t->reg.tool_name == name) return *t;
  throw Error(ErrorCode::UnknownTool, "no tool named '" + std::string(name) + "'");
}

const ToolRegistration& Session::tool(std::string_view name) const {
  return const_cast<Session*>(this)->registered(name).reg;
}

std::vector<const ToolRegistration*> Session::tools() const {
  std::vector<const ToolRegistration*> out;
  for (const auto& t : tools_) out.push_back(&t->reg);
  return out;
}

ToolInstance& Session::instance_mut(std::string_view instance_id) {
  auto it = instances_.find(instance_id);
  if (it == instances_.end()) throw Error(ErrorCode::NoInstance, "no tool instance '" + std::string(instance_id) + "'");
  return it->second;
}

const ToolInstance& Session::instance(std::string_view instance_id) const {
  return const_cast<Session*>(this)->instance_mut(instance_id);
}

const ToolInstance* Session::instance_for_cell(std::string_view cell_id) const {
  for (const auto& [id, inst] : instances_)
    if (inst.cell_id == cell_id) return &inst;
  return nullptr;
}

std::vector<const ToolInstance*> Session::instances() const {
  std::vector<const ToolInstance*> out;
  for (const auto& [id, inst] : instances_) out.push_back(&inst);
  return out;
}

Cell& Session::cell_mut(std::string_view cell_id) {
  Cell* c = nb_.find(cell_id);
  if (!c) throw Error(ErrorCode::UnknownCell, "no cell '" + std::string(cell_id) + "'");
  return *c;
}

ExecutionResult Session::run_prefix(const Notebook& nb, std::string_view through_cell_id) {
  full_run_revision_.reset();
  return execute_prefix(nb, through_cell_id, *backend_);
}

VariableSnapshot Session::run_and_snapshot(const Notebook& nb, const Cell& through, const std::string& var) {
  full_run_revision_.reset();
  ExecutionResult r = execute_prefix_with(nb, through, *backend_);
  if (!r.ok) execution_failed(r);
  try {
    return backend_->snapshot(var);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::UnboundVariable) throw;
    throw Error(ErrorCode::ExecutionFailed, "'" + var + "' is not bound after cell " + through.id);
  }
}

std::vector<std::pair<std::string, Error>> Session::auto_invoke() {
  std::vector<std::pair<std::string, Error>> failures;
  std::vector<std::string> ids;
  for (const auto& c : nb_.cells) ids.push_back(c.id);
  for (const auto& id : ids) {
    const Cell* c = nb_.find(id);
    if (!c || instance_for_cell(id)) continue;
    try {
      if (!c->invocation()) continue;
      invoke_tool(id);
    } catch (const Error& e) {
      failures.emplace_back(id, e);
    }
  }
  return failures;
}

const ToolInstance& Session::invoke_tool(const std::string& cell_id) {
  const Cell& cell = cell_mut(cell_id);
  if (const ToolInstance* existing = instance_for_cell(cell_id))
    throw Error(ErrorCode::InstanceExists, "cell " + cell_id + " already hosts " + existing->instance_id);
  std::optional<Invocation> inv = cell.invocation();
  if (!inv) throw Error(ErrorCode::NotAnInvocation, "line 0 of cell " + cell_id + " is not an invocation");
  RegisteredTool& tool = registered(inv->tool_name);
  if (inv->args.size() != tool.reg.params.size())
    throw Error(ErrorCode::ArityMismatch, "tool '" + inv->tool_name + "' takes " +
                                              std::to_string(tool.reg.params.size()) + " argument(s), got " +
                                              std::to_string(inv->args.size()));

  ExecutionResult r = run_prefix(nb_, cell_id);
  if (!r.ok) execution_failed(r);

  VariableSnapshot data;
  for (std::size_t i = 0; i < inv->args.size(); ++i) {
    VariableSnapshot s = backend_->snapshot(inv->args[i]);
    const auto& accepted = tool.reg.params[i].accepted_types;
    if (std::find(accepted.begin(), accepted.end(), s.type) == accepted.end())
      throw Error(ErrorCode::TypeCheckFailed,
                  "'" + inv->args[i] + "' has type " + s.type + ", parameter '" + tool.reg.params[i].name +
                      "' accepts " + accepted.front(),
                  tool.reg.type_error_message);
    if (i == 0) data = std::move(s);
  }

  if (tool.reg.preprocess_id && !inv->args.empty()) {
    const Preprocess& pre = preprocesses_.at(*tool.reg.preprocess_id);
    std::string code = instantiate(pre.code, {{"IN", inv->args[0]}});
    std::vector<std::string> want{pre.output_var};
    SandboxResult sr = backend_->execute_sandboxed(code, want);
    if (!sr.result.ok || sr.snapshots.empty())
      throw Error(ErrorCode::ExecutionFailed, "preprocess '" + pre.id + "' failed: " + sr.result.error);
    data = sr.snapshots.front();
  }

  ToolInstance inst;
  inst.instance_id = inv->tool_name + "@" + cell_id;
  inst.tool_name = inv->tool_name;
  inst.cell_id = cell_id;
  inst.args = inv->args;
  inst.displayed_var = inv->args.empty() ? std::string() : inv->args[0];
  inst.next_seq = max_seq(cell, inst.instance_id) + 1;
  inst.data = std::move(data);
  std::string key = inst.instance_id;
  return instances_.insert_or_assign(std::move(key), std::move(inst)).first->second;
}

std::string Session::next_cell_id() const {
  std::int64_t max_n = 0;
  for (const auto& c : nb_.cells) {
    if (c.id.rfind("cell-", 0) != 0) continue;
    std::string digits = c.id.substr(5);
    if (!digits.empty() && digits.size() < 12 && std::all_of(digits.begin(), digits.end(), ::isdigit))
      max_n = std::max<std::int64_t>(max_n, std::stoll(digits));
  }
  return "cell-" + std::to_string(std::max<std::int64_t>(max_n, static_cast<std::int64_t>(nb_.cells.size())) + 1);
}

std::string Session::add_cell(std::string_view text, std::optional<std::string> after_cell_id) {
  std::string id = next_cell_id();
  Cell c = make_cell(id, text);
  if (after_cell_id) {
    auto idx = nb_.index_of(*after_cell_id);
    if (!idx) throw Error(ErrorCode::UnknownCell, "no cell '" + *after_cell_id + "'");
    nb_.cells.insert(nb_.cells.begin() + static_cast<std::ptrdiff_t>(*idx + 1), std::move(c));
  } else {
    nb_.cells.push_back(std::move(c));
  }
  touched();
  return id;
}

TemplateUse Session::resolve_action(const TemplateVariantSet& set, const ToolRegistration& reg,
                                    const std::string& var_type, const std::string& env_var,
                                    const BindingSet& data) const {
  const TemplateSpec& spec = select_variant(set, var_type, config_.dialect, reg.type_error_message);
  BindingSet b;
  for (const auto& blank : spec.blanks) {
    if (blank.source != BlankSource::EnvResolved) continue;
    if (data.count(blank.name))
      throw Error(ErrorCode::InvalidParams, "blank '" + blank.name + "' is filled from the environment");
    b[blank.name] = env_var;
  }
  for (const auto& [k, v] : data) {
    if (!spec.find_blank(k))
      throw Error(ErrorCode::UnknownBlank, "template " + spec.template_id + " has no blank '" + k + "'");
    b[k] = v;
  }
  instantiate(spec, b);  // validates kinds and completeness
  return {&spec, std::move(b)};
}

std::optional<Cell> Session::compact_candidate(const RegisteredTool& tool, const ToolInstance& inst,
                                               const Cell& cell, const std::string& var_type,
                                               const PlannedAction& next) {
  LineSpan region = writable_region(cell);
  std::vector<PlannedAction> history;
  for (std::size_t i = region.begin; i < region.end; ++i) {
    auto rec = recognize_line(tool.recognizers, cell.lines[i].text);
    if (!rec) return std::nullopt;
    const TemplateSpec* spec = find_template(tool.reg, rec->template_id);
    if (!spec) return std::nullopt;
    for (const auto& blank : spec->blanks)
      if (blank.source == BlankSource::EnvResolved && rec->bindings[blank.name] != inst.displayed_var)
        return std::nullopt;
    history.push_back({rec->action_name, action_data_only(spec, rec->bindings)});
  }
  history.push_back(next);

  Cell truncated = cell;
  truncated.lines.resize(region.begin);
  VariableSnapshot base;
  try {
    base = run_and_snapshot(nb_, truncated, inst.displayed_var);
  } catch (const Error&) {
    return std::nullopt;
  }
  auto folded = tool.model->fold(base, history);
  if (!folded) return std::nullopt;

  std::vector<TemplateUse> uses;
  try {
    for (const auto& a : *folded) {
      const TemplateVariantSet* set = tool.reg.find_action(a.action_name);
      if (!set) return std::nullopt;
      uses.push_back(resolve_action(*set, tool.reg, var_type, inst.displayed_var, a.bindings));
    }
    return rewrite_writable(cell, uses, inst.instance_id, inst.next_seq);
  } catch (const Error&) {
    return std::nullopt;
  }
}

SyncResult Session::handoff(const std::string& instance_id, const std::string& action_name,
                            const BindingSet& data) {
  ToolInstance& inst = instance_mut(instance_id);
  RegisteredTool& tool = registered(inst.tool_name);
  const TemplateVariantSet* set = tool.reg.find_action(action_name);
  if (!set) throw Error(ErrorCode::UnknownAction, "tool '" + inst.tool_name + "' has no action '" + action_name + "'");

  const Cell cell = cell_mut(inst.cell_id);
  VariableSnapshot current = run_and_snapshot(nb_, cell, inst.displayed_var);
  TemplateUse use = resolve_action(*set, tool.reg, current.type, inst.displayed_var, data);
  const std::int64_t seq = inst.next_seq;
  Cell naive = insert_generated(cell, instantiate(*use.spec, use.bindings),
                                Provenance::generated(inst.instance_id, seq, use.spec->template_id));
  VariableSnapshot snap = run_and_snapshot(nb_, naive, inst.displayed_var);

  Cell committed = naive;
  bool compacted = false;
  std::int64_t used = 1;
  if (tool.model && config_.compact) {
    PlannedAction next{action_name, action_data_only(use.spec, use.bindings)};
    std::optional<Cell> candidate = compact_candidate(tool, inst, cell, current.type, next);
    // only a strictly shorter region is worth reordering the user's view for
    if (candidate && writable_region(*candidate).size() < writable_region(naive).size()) {
      try {
        VariableSnapshot s = run_and_snapshot(nb_, *candidate, inst.displayed_var);
        if (s.hash == snap.hash) {
          std::int64_t written = static_cast<std::int64_t>(writable_region(*candidate).size());
          committed = std::move(*candidate);
          compacted = true;
          used = std::max<std::int64_t>(written, 1);
          snap = std::move(s);
        }
      } catch (const Error&) {
      }
    }
  }

  cell_mut(inst.cell_id) = committed;
  touched();
  inst.next_seq = seq + used;
  inst.data = snap;

  SyncResult out;
  out.instance_id = inst.instance_id;
  out.cell_id = inst.cell_id;
  out.cell_text = committed.text();
  out.snapshot = snap;
  out.action = {inst.instance_id, action_name, action_data_only(use.spec, use.bindings), seq + used - 1};
  out.compacted = compacted;
  return out;
}

VariableSnapshot Session::get_variable(const std::string& name) {
  if (full_run_revision_ != revision_) {
    ExecutionResult r = run_prefix(nb_, "");
    if (!r.ok) execution_failed(r);
    full_run_revision_ = revision_;
  }
  return backend_->snapshot(name);
}

std::map<std::string, VariableSnapshot> Session::snapshot_all() {
  std::map<std::string, VariableSnapshot> out;
  if (full_run_revision_ != revision_) {
    ExecutionResult r = run_prefix(nb_, "");
    if (!r.ok) execution_failed(r);
    full_run_revision_ = revision_;
  }
  for (const auto& name : backend_->variables()) out.emplace(name, backend_->snapshot(name));
  return out;
}

EditResult Session::on_code_edit(const std::string& cell_id, std::string_view new_text) {
  Cell& cell = cell_mut(cell_id);
  EditResult out;
  out.cell_id = cell_id;

  const ToolInstance* found = instance_for_cell(cell_id);
  if (!found) {
    Cell replaced = make_cell(cell_id, new_text);
    if (replaced.texts() != cell.texts()) {
      cell = std::move(replaced);
      touched();
    }
    return out;
  }

  ToolInstance& inst = instance_mut(found->instance_id);
  RegisteredTool& tool = registered(inst.tool_name);
  auto [after, report] = reconcile_edit(cell, new_text, tool.recognizers, {inst.instance_id, inst.next_seq});
  out.instance_id = inst.instance_id;
  if (after != cell) {
    cell = after;
    touched();
  }
  inst.next_seq = std::max(inst.next_seq, report.next_seq);
  out.report = report;
  if (report.empty()) return out;

  if (!report.refresh_only) {
    for (const auto& u : report.updated_actions)
      out.notifications.push_back({ToolNotification::Kind::BindingUpdate, u.seq, u.action_name,
                                   action_data_only(find_template(tool.reg, u.template_id), u.bindings),
                                   std::nullopt,
                                   {}});
    for (auto seq : report.removed_actions)
      out.notifications.push_back({ToolNotification::Kind::ActionRemoved, seq, {}, {}, std::nullopt, {}});
    for (const auto& a : report.added_actions)
      out.notifications.push_back({ToolNotification::Kind::ActionAdded, a.seq, a.action_name,
                                   action_data_only(find_template(tool.reg, a.template_id), a.bindings),
                                   std::nullopt,
                                   {}});
  }

  try {
    VariableSnapshot snap = run_and_snapshot(nb_, cell, inst.displayed_var);
    inst.data = snap;
    out.notifications.push_back({ToolNotification::Kind::DataRefresh, 0, {}, {}, std::move(snap), {}});
  } catch (const Error& e) {
    out.notifications.push_back({ToolNotification::Kind::ExecutionError, 0, {}, {}, std::nullopt, e.what()});
  }
  return out;
}

TransferResult Session::transfer_selection(const std::string& instance_id, const SelectionSpec& selection,
                                           const std::string& target_name) {
  ToolInstance& inst = instance_mut(instance_id);
  RegisteredTool& tool = registered(inst.tool_name);
  const SelectionTarget* target = tool.reg.find_target(target_name);
  if (!target) throw Error(ErrorCode::UnknownTarget, "tool '" + inst.tool_name + "' has no target '" + target_name + "'");
  if (selection.terms.empty()) throw Error(ErrorCode::EmptySelection, "the selection is empty");
  for (const auto& term : selection.terms)
    if (term.empty()) throw Error(ErrorCode::EmptySelection, "a selection term has no predicates");

  auto action_set = [&](const char* name) -> const TemplateVariantSet& {
    const TemplateVariantSet* s = target->find_action(name);
    if (!s) throw Error(ErrorCode::InvalidPack, "target '" + target_name + "' lacks action '" + name + "'");
    return *s;
  };

  const Cell& source = cell_mut(inst.cell_id);
  VariableSnapshot current = run_and_snapshot(nb_, source, inst.displayed_var);
  const std::string var = "sel_" + std::to_string(next_selection_);

  struct Planned {
    std::string text;
    std::string template_id;
  };
  std::vector<Planned> planned;
  auto plan = [&](const char* action, const BindingSet& data) {
    TemplateUse use = resolve_action(action_set(action), tool.reg, current.type, inst.displayed_var, data);
    planned.push_back({instantiate(*use.spec, use.bindings), use.spec->template_id});
  };
  for (std::size_t k = 0; k < selection.terms.size(); ++k) {
    const std::string name = k == 0 ? var : var + "_" + std::to_string(k + 1);
    for (std::size_t p = 0; p < selection.terms[k].size(); ++p) {
      const SelectionPredicate& pred = selection.terms[k][p];
      BindingSet b{{"SEL", name},
                   {"COL", is_identifier(pred.column) ? pred.column : quote_string(pred.column)},
                   {"EXPR", pred.op + " " + literal_of(pred.value)}};
      plan(p == 0 ? "select-first" : "select-refine", b);
    }
    if (k > 0) plan("select-union", {{"SEL", var}, {"PART", name}});
  }

  const std::string new_id = next_cell_id();
  Cell fresh;
  fresh.id = new_id;
  std::int64_t seq = inst.next_seq;
  if (target->tool) {
    fresh.lines.push_back({"%%mage " + *target->tool + " " + var, Provenance::user()});
    for (const auto& p : planned) fresh.lines.push_back({p.text, Provenance::frozen()});
  } else {
    for (const auto& p : planned)
      fresh.lines.push_back({p.text, Provenance::generated(inst.instance_id, seq++, p.template_id)});
  }

  Notebook candidate = nb_;
  candidate.cells.insert(candidate.cells.begin() + static_cast<std::ptrdiff_t>(*nb_.index_of(inst.cell_id) + 1),
                         fresh);
  VariableSnapshot snap = run_and_snapshot(candidate, fresh, var);

  TransferResult out;
  out.cell_id = new_id;
  out.variable = var;
  out.snapshot = snap;
  if (target->tool) {
    Notebook previous = std::move(nb_);
    nb_ = std::move(candidate);
    try {
      const ToolInstance& created = invoke_tool(new_id);
      out.instance_id = created.instance_id;
      out.snapshot = created.data;
    } catch (...) {
      nb_ = std::move(previous);
      full_run_revision_.reset();
      throw;
    }
  } else {
    nb_ = std::move(candidate);
    instance_mut(instance_id).next_seq = seq;
  }
  ++next_selection_;
  touched();
  return out;
}

}  // namespace cellsync

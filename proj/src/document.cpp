#include "cellsync/document.hpp"

#include "cellsync/error.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <set>

namespace cellsync {

Provenance Provenance::generated(std::string tool_instance, std::int64_t seq, std::string template_id) {
  return {Kind::Generated, std::move(tool_instance), seq, std::move(template_id)};
}

namespace {

constexpr std::string_view kMagic = "%%mage";

std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
    std::size_t start = i;
    while (i < s.size() && s[i] != ' ' && s[i] != '\t') ++i;
    if (i > start) out.push_back(s.substr(start, i - start));
  }
  return out;
}

}  // namespace

Invocation parse_invocation(std::string_view line0) {
  auto tokens = split_ws(line0);
  if (tokens.empty() || tokens[0] != kMagic) throw Error(ErrorCode::NotAnInvocation, "line does not start with %%mage");
  if (tokens.size() < 2) throw Error(ErrorCode::NotAnInvocation, "%%mage needs a tool name");
  if (!matches_kind(BlankKind::Ident, tokens[1]))
    throw Error(ErrorCode::NotAnInvocation, "invalid tool name '" + std::string(tokens[1]) + "'");
  Invocation inv{std::string(tokens[1]), {}};
  for (std::size_t i = 2; i < tokens.size(); ++i) {
    if (!matches_kind(BlankKind::Ident, tokens[i]))
      throw Error(ErrorCode::NonIdentifierArgument,
                  "invocation argument '" + std::string(tokens[i]) + "' is not an identifier");
    inv.args.emplace_back(tokens[i]);
  }
  return inv;
}

std::optional<Invocation> Cell::invocation() const {
  if (lines.empty()) return std::nullopt;
  try {
    return parse_invocation(lines[0].text);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::NotAnInvocation) return std::nullopt;
    throw;
  }
}

std::vector<std::string> Cell::texts() const {
  std::vector<std::string> out;
  out.reserve(lines.size());
  for (const auto& l : lines) out.push_back(l.text);
  return out;
}

std::string Cell::text() const {
  std::string out;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (i) out += '\n';
    out += lines[i].text;
  }
  return out;
}

std::vector<std::string> split_lines(std::string_view text) {
  std::vector<std::string> out;
  if (text.empty()) return out;
  std::size_t start = 0;
  while (true) {
    std::size_t nl = text.find('\n', start);
    std::string_view line = text.substr(start, nl == std::string_view::npos ? std::string_view::npos : nl - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    out.emplace_back(line);
    if (nl == std::string_view::npos) break;
    start = nl + 1;
    if (start == text.size()) break;
  }
  return out;
}

Cell make_cell(std::string id, std::string_view text) {
  Cell c{std::move(id), {}};
  for (auto& line : split_lines(text)) c.lines.push_back({std::move(line), Provenance::user()});
  return c;
}

Cell* Notebook::find(std::string_view id) {
  for (auto& c : cells)
    if (c.id == id) return &c;
  return nullptr;
}

const Cell* Notebook::find(std::string_view id) const {
  return const_cast<Notebook*>(this)->find(id);
}

std::optional<std::size_t> Notebook::index_of(std::string_view id) const {
  for (std::size_t i = 0; i < cells.size(); ++i)
    if (cells[i].id == id) return i;
  return std::nullopt;
}

LineSpan writable_region(const Cell& cell) {
  std::size_t begin = cell.lines.empty() ? 0 : 1;
  for (std::size_t i = cell.lines.size(); i-- > 1;) {
    if (!cell.lines[i].prov.is_generated()) {
      begin = i + 1;
      break;
    }
  }
  return {begin, std::max(begin, cell.lines.size())};
}

Cell insert_generated(const Cell& cell, std::string line_text, Provenance prov) {
  if (!cell.invocation()) throw Error(ErrorCode::NoInvocation, "cell '" + cell.id + "' has no tool invocation");
  if (!prov.is_generated()) throw Error(ErrorCode::InvalidParams, "inserted line must carry generated provenance");
  for (const auto& l : cell.lines) {
    if (l.prov.is_generated() && l.prov.tool_instance == prov.tool_instance && l.prov.action_seq >= prov.action_seq)
      throw Error(ErrorCode::SeqNotMonotonic, "action seq " + std::to_string(prov.action_seq) +
                                                  " is not above existing seq " + std::to_string(l.prov.action_seq));
  }
  Cell out = cell;
  out.lines.push_back({std::move(line_text), std::move(prov)});
  return out;
}

namespace {

// Where each line of the new text came from.
struct Origin {
  enum class Kind { Matched, Changed, Added } kind = Kind::Added;
  std::size_t old_index = 0;
};

struct Alignment {
  std::vector<Origin> origins;       // indexed by new line
  std::vector<std::size_t> deleted;  // old line indices with no counterpart
};

Alignment align(const std::vector<std::string>& old_lines, const std::vector<std::string>& new_lines) {
  const std::size_t n = old_lines.size(), m = new_lines.size();
  std::vector<std::vector<std::uint32_t>> lcs(n + 1, std::vector<std::uint32_t>(m + 1, 0));
  for (std::size_t i = n; i-- > 1;)
    for (std::size_t j = m; j-- > 1;)
      lcs[i][j] = old_lines[i] == new_lines[j] ? lcs[i + 1][j + 1] + 1 : std::max(lcs[i + 1][j], lcs[i][j + 1]);

  Alignment a;
  a.origins.resize(m);
  a.origins[0] = {Origin::Kind::Matched, 0};
  std::vector<std::size_t> dels, adds;
  auto flush = [&] {
    std::size_t paired = std::min(dels.size(), adds.size());
    for (std::size_t k = 0; k < paired; ++k) a.origins[adds[k]] = {Origin::Kind::Changed, dels[k]};
    for (std::size_t k = paired; k < adds.size(); ++k) a.origins[adds[k]] = {Origin::Kind::Added, 0};
    for (std::size_t k = paired; k < dels.size(); ++k) a.deleted.push_back(dels[k]);
    dels.clear();
    adds.clear();
  };
  std::size_t i = 1, j = 1;
  while (i < n || j < m) {
    if (i < n && j < m && old_lines[i] == new_lines[j] && lcs[i][j] == lcs[i + 1][j + 1] + 1) {
      flush();
      a.origins[j] = {Origin::Kind::Matched, i};
      ++i;
      ++j;
    } else if (j >= m || (i < n && lcs[i + 1][j] >= lcs[i][j + 1])) {
      dels.push_back(i++);
    } else {
      adds.push_back(j++);
    }
  }
  flush();
  return a;
}

const Recognizer* find_recognizer(std::span<const Recognizer> recognizers, const std::string& template_id) {
  for (const auto& r : recognizers)
    if (r.template_id() == template_id) return &r;
  return nullptr;
}

}  // namespace

std::pair<Cell, ReconcileReport> reconcile_edit(const Cell& before, std::string_view new_text,
                                                std::span<const Recognizer> recognizers,
                                                const ReconcileContext& ctx) {
  if (!before.invocation()) throw Error(ErrorCode::NoInvocation, "cell '" + before.id + "' has no tool invocation");
  std::vector<std::string> new_lines = split_lines(new_text);
  if (new_lines.empty() || new_lines[0] != before.lines[0].text)
    throw Error(ErrorCode::InvocationLineModified, "the invocation line of cell '" + before.id + "' cannot be edited");

  const Alignment alignment = align(before.texts(), new_lines);
  ReconcileReport report;
  report.next_seq = ctx.next_seq;

  // Per new line: provenance before freezing, plus what the tool should hear.
  enum class Pending { None, Update, Add };
  struct Plan {
    Provenance prov;
    Pending pending = Pending::None;
    std::optional<Recognition> recognition;
    bool was_generated = false;
  };
  std::vector<Plan> plans(new_lines.size());
  std::optional<std::size_t> last_unrecognized;

  auto removed = [&](const LineRecord& old) {
    if (old.prov.is_generated()) report.removed_actions.push_back(old.prov.action_seq);
  };
  auto unrecognized = [&](std::size_t j) {
    plans[j].prov = Provenance::user();
    report.refresh_only = true;
    last_unrecognized = j;
  };

  for (std::size_t j = 0; j < new_lines.size(); ++j) {
    const Origin& origin = alignment.origins[j];
    Plan& plan = plans[j];
    if (origin.kind == Origin::Kind::Matched) {
      plan.prov = before.lines[origin.old_index].prov;
      plan.was_generated = plan.prov.is_generated();
      continue;
    }
    auto recognized = recognize_line(recognizers, new_lines[j]);
    if (origin.kind == Origin::Kind::Changed) {
      const LineRecord& old = before.lines[origin.old_index];
      if (old.prov.kind == Provenance::Kind::Frozen) {
        plan.prov = old.prov;
        report.refresh_only = true;
        continue;
      }
      if (recognized && old.prov.is_generated() && recognized->template_id == old.prov.template_id) {
        plan.prov = old.prov;
        plan.was_generated = true;
        const Recognizer* r = find_recognizer(recognizers, old.prov.template_id);
        auto old_bindings = r ? r->match(old.text) : std::nullopt;
        if (!old_bindings || *old_bindings != recognized->bindings) plan.pending = Pending::Update;
        plan.recognition = std::move(recognized);
        continue;
      }
      removed(old);
    }
    if (recognized) {
      plan.prov = Provenance::generated(ctx.tool_instance, 0, recognized->template_id);
      plan.pending = Pending::Add;
      plan.recognition = std::move(recognized);
    } else {
      unrecognized(j);
    }
  }
  for (std::size_t i : alignment.deleted) removed(before.lines[i]);

  // Generated lines above a newly unrecognized line are frozen. A recognized
  // line typed above existing user code is untouchable from the start.
  const std::size_t freeze_below = last_unrecognized.value_or(0);
  std::size_t last_user_code = 0;
  for (std::size_t j = 1; j < plans.size(); ++j)
    if (!plans[j].prov.is_generated()) last_user_code = j;

  Cell after{before.id, {}};
  for (std::size_t j = 0; j < new_lines.size(); ++j) {
    Plan& plan = plans[j];
    const std::size_t limit = plan.pending == Pending::Add ? last_user_code : freeze_below;
    if (plan.prov.is_generated() && j < limit) {
      plan.prov = Provenance::frozen();
      if (plan.was_generated) report.newly_frozen.push_back(j);
    } else if (plan.pending == Pending::Update) {
      report.updated_actions.push_back({plan.prov.action_seq, plan.recognition->template_id,
                                        plan.recognition->action_name, plan.recognition->bindings, j});
    } else if (plan.pending == Pending::Add) {
      plan.prov.action_seq = report.next_seq++;
      report.added_actions.push_back({plan.prov.action_seq, plan.recognition->template_id,
                                      plan.recognition->action_name, plan.recognition->bindings, j});
    }
    after.lines.push_back({std::move(new_lines[j]), std::move(plan.prov)});
  }
  report.new_freeze_boundary = last_unrecognized;
  std::sort(report.removed_actions.begin(), report.removed_actions.end());
  return {std::move(after), std::move(report)};
}

Cell rewrite_writable(const Cell& cell, std::span<const TemplateUse> final_templates,
                      const std::string& tool_instance, std::int64_t first_seq) {
  if (!cell.invocation()) throw Error(ErrorCode::NoInvocation, "cell '" + cell.id + "' has no tool invocation");
  const LineSpan region = writable_region(cell);
  for (std::size_t i = region.begin; i < region.end; ++i)
    if (!cell.lines[i].prov.is_generated())
      throw Error(ErrorCode::FrozenInWritable, "line " + std::to_string(i) + " in the writable region is not generated");

  Cell out{cell.id, {cell.lines.begin(), cell.lines.begin() + static_cast<std::ptrdiff_t>(region.begin)}};
  std::int64_t seq = first_seq;
  for (const auto& use : final_templates)
    out.lines.push_back({instantiate(*use.spec, use.bindings),
                         Provenance::generated(tool_instance, seq++, use.spec->template_id)});
  return out;
}

namespace {

nlohmann::json prov_to_json(const Provenance& p) {
  switch (p.kind) {
    case Provenance::Kind::Generated:
      return {{"kind", "generated"}, {"tool", p.tool_instance}, {"seq", p.action_seq}, {"template", p.template_id}};
    case Provenance::Kind::User: return {{"kind", "user"}};
    case Provenance::Kind::Frozen: return {{"kind", "frozen"}};
  }
  return {};
}

Provenance prov_from_json(const nlohmann::json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "generated")
    return Provenance::generated(j.at("tool").get<std::string>(), j.at("seq").get<std::int64_t>(),
                                 j.at("template").get<std::string>());
  if (kind == "user") return Provenance::user();
  if (kind == "frozen") return Provenance::frozen();
  throw Error(ErrorCode::MalformedDocument, "unknown provenance kind '" + kind + "'");
}

}  // namespace

nlohmann::json cell_to_json(const Cell& c) {
  nlohmann::json lines = nlohmann::json::array();
  for (const auto& l : c.lines) lines.push_back({{"text", l.text}, {"prov", prov_to_json(l.prov)}});
  return {{"id", c.id}, {"lines", std::move(lines)}};
}

std::string save_notebook(const Notebook& nb) {
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : nb.cells) cells.push_back(cell_to_json(c));
  nlohmann::json doc = {{"version", nb.version}, {"cells", std::move(cells)}};
  return doc.dump(1) + "\n";
}

Notebook load_notebook(std::string_view bytes) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(bytes);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedDocument, std::string("notebook is not valid JSON: ") + e.what());
  }
  try {
    if (!doc.is_object() || !doc.contains("version")) throw Error(ErrorCode::MalformedDocument, "missing version");
    const int version = doc.at("version").get<int>();
    if (version != 1) throw Error(ErrorCode::VersionMismatch, "unsupported notebook version " + std::to_string(version));
    Notebook nb;
    std::set<std::string> ids;
    for (const auto& jc : doc.at("cells")) {
      Cell c{jc.at("id").get<std::string>(), {}};
      if (!ids.insert(c.id).second) throw Error(ErrorCode::MalformedDocument, "duplicate cell id '" + c.id + "'");
      for (const auto& jl : jc.at("lines")) {
        std::string text = jl.at("text").get<std::string>();
        if (text.find('\n') != std::string::npos)
          throw Error(ErrorCode::MalformedDocument, "line text in cell '" + c.id + "' contains a newline");
        c.lines.push_back({std::move(text), prov_from_json(jl.at("prov"))});
      }
      nb.cells.push_back(std::move(c));
    }
    return nb;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedDocument, std::string("notebook structure is invalid: ") + e.what());
  }
}

}  // namespace cellsync

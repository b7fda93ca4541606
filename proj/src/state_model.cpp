#include "cellsync/state_model.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <set>

namespace cellsync {

std::string column_name_of(std::string_view literal) {
  if (literal.size() < 2 || literal.front() != '"' || literal.back() != '"') return std::string(literal);
  std::string out;
  for (std::size_t i = 1; i + 1 < literal.size(); ++i) {
    char c = literal[i];
    if (c == '\\' && i + 2 < literal.size()) {
      char e = literal[++i];
      out += e == 'n' ? '\n' : e == 't' ? '\t' : e;
    } else {
      out += c;
    }
  }
  return out;
}

std::string quote_string(std::string_view text) {
  std::string out = "\"";
  for (char c : text) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\t': out += "\\t"; break;
      default: out += c;
    }
  }
  return out + "\"";
}

std::unique_ptr<StateModel> make_state_model(std::string_view name) {
  if (name == "table") return std::make_unique<TableStateModel>();
  return nullptr;
}

namespace {

struct Column {
  std::string name;
  std::string name_text;  // STRING literal to emit
  bool original = false;
  std::string value_text;  // inserted columns only
  bool moved = false;
  bool dropped = false;
  bool filtered = false;
};

struct Filter {
  std::size_t column;
  std::string col_text;
  std::string expr;
};

std::optional<std::size_t> parse_index(const BindingSet& b, const char* key) {
  auto it = b.find(key);
  if (it == b.end() || it->second.empty() || it->second.size() > 9) return std::nullopt;
  return static_cast<std::size_t>(std::stoul(it->second));
}

std::string strip_spaces(std::string_view s) {
  std::string out;
  for (char c : s)
    if (c != ' ' && c != '\t') out += c;
  return out;
}

}  // namespace

std::optional<std::vector<PlannedAction>> TableStateModel::fold(const VariableSnapshot& base,
                                                                std::span<const PlannedAction> actions) const {
  if (base.type != "table") return std::nullopt;
  std::vector<Column> cols;
  try {
    const nlohmann::json body = nlohmann::json::parse(base.body);
    for (const auto& name : body.at("columns"))
      cols.push_back({name.get<std::string>(), quote_string(name.get<std::string>()), true, {}, false, false, false});
  } catch (const nlohmann::json::exception&) {
    return std::nullopt;
  }
  const std::size_t base_count = cols.size();
  std::vector<std::size_t> cur(base_count);
  for (std::size_t i = 0; i < base_count; ++i) cur[i] = i;

  auto find = [&](const std::string& name) -> std::optional<std::size_t> {
    for (std::size_t pos = 0; pos < cur.size(); ++pos)
      if (cols[cur[pos]].name == name) return pos;
    return std::nullopt;
  };

  // Replay the history on column identities.
  std::vector<Filter> filters;
  std::set<std::pair<std::size_t, std::string>> seen_filters;
  for (const auto& a : actions) {
    const BindingSet& b = a.bindings;
    if (a.action_name == "filter") {
      if (!b.count("COL") || !b.count("EXPR")) return std::nullopt;
      auto pos = find(column_name_of(b.at("COL")));
      if (!pos) return std::nullopt;
      std::size_t id = cur[*pos];
      if (seen_filters.insert({id, strip_spaces(b.at("EXPR"))}).second) filters.push_back({id, b.at("COL"), b.at("EXPR")});
      cols[id].filtered = true;
    } else if (a.action_name == "insert-column") {
      auto idx = parse_index(b, "IDX");
      if (!idx || !b.count("NAME") || !b.count("VALUE") || *idx > cur.size()) return std::nullopt;
      std::string name = column_name_of(b.at("NAME"));
      // a reused name would make two identities share a name in the normal form
      for (const auto& c : cols)
        if (c.name == name) return std::nullopt;
      cols.push_back({name, b.at("NAME"), false, b.at("VALUE"), false, false, false});
      cur.insert(cur.begin() + static_cast<std::ptrdiff_t>(*idx), cols.size() - 1);
    } else if (a.action_name == "move-column") {
      auto idx = parse_index(b, "IDX");
      if (!idx || !b.count("NAME")) return std::nullopt;
      auto pos = find(column_name_of(b.at("NAME")));
      if (!pos || *idx >= cur.size()) return std::nullopt;
      std::size_t id = cur[*pos];
      cur.erase(cur.begin() + static_cast<std::ptrdiff_t>(*pos));
      cur.insert(cur.begin() + static_cast<std::ptrdiff_t>(*idx), id);
      cols[id].moved = true;
    } else if (a.action_name == "drop-column") {
      if (!b.count("NAME")) return std::nullopt;
      auto pos = find(column_name_of(b.at("NAME")));
      if (!pos) return std::nullopt;
      cols[cur[*pos]].dropped = true;
      cur.erase(cur.begin() + static_cast<std::ptrdiff_t>(*pos));
    } else {
      return std::nullopt;
    }
  }
  const std::vector<std::size_t> final_order = cur;

  // Emit the normal form, tracking the layout it produces.
  std::vector<PlannedAction> out;
  std::vector<std::size_t> layout(base_count);
  for (std::size_t i = 0; i < base_count; ++i) layout[i] = i;
  auto position = [&](std::size_t id) {
    return static_cast<std::size_t>(std::find(layout.begin(), layout.end(), id) - layout.begin());
  };
  auto drop = [&](std::size_t id) {
    out.push_back({"drop-column", {{"NAME", cols[id].name_text}}});
    layout.erase(layout.begin() + static_cast<std::ptrdiff_t>(position(id)));
  };
  // Index just after the nearest column preceding `at` in the final order
  // that satisfies `placed`.
  auto slot_after_predecessor = [&](std::size_t at, auto&& placed) -> std::size_t {
    for (std::size_t k = at; k-- > 0;)
      if (placed(final_order[k])) return position(final_order[k]) + 1;
    return 0;
  };

  for (std::size_t id = 0; id < base_count; ++id)
    if (cols[id].dropped && !cols[id].filtered) drop(id);

  std::vector<bool> placed(cols.size(), false);
  for (std::size_t id = 0; id < base_count; ++id) placed[id] = !cols[id].dropped && !cols[id].moved;
  for (std::size_t k = 0; k < final_order.size(); ++k) {
    std::size_t id = final_order[k];
    if (!cols[id].original || !cols[id].moved) continue;
    std::size_t from = position(id);
    layout.erase(layout.begin() + static_cast<std::ptrdiff_t>(from));
    std::size_t to = slot_after_predecessor(k, [&](std::size_t p) { return placed[p]; });
    layout.insert(layout.begin() + static_cast<std::ptrdiff_t>(to), id);
    placed[id] = true;
    if (to != from) out.push_back({"move-column", {{"NAME", cols[id].name_text}, {"IDX", std::to_string(to)}}});
  }

  auto insert = [&](std::size_t id, std::size_t at) {
    out.push_back({"insert-column",
                   {{"IDX", std::to_string(at)}, {"NAME", cols[id].name_text}, {"VALUE", cols[id].value_text}}});
    layout.insert(layout.begin() + static_cast<std::ptrdiff_t>(at), id);
  };
  for (std::size_t k = 0; k < final_order.size(); ++k) {
    std::size_t id = final_order[k];
    if (cols[id].original) continue;
    insert(id, slot_after_predecessor(k, [&](std::size_t p) {
             return std::find(layout.begin(), layout.end(), p) != layout.end();
           }));
  }
  for (std::size_t id = base_count; id < cols.size(); ++id)
    if (cols[id].dropped && cols[id].filtered) insert(id, layout.size());

  for (const auto& f : filters)
    out.push_back({"filter", {{"COL", f.col_text}, {"EXPR", f.expr}}});

  for (std::size_t id = 0; id < cols.size(); ++id)
    if (cols[id].dropped && cols[id].filtered) drop(id);

  if (layout != final_order) return std::nullopt;
  return out;
}

}  // namespace cellsync

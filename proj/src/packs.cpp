#include "cellsync/packs.hpp"

#include "cellsync/error.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

namespace cellsync {

namespace canonical {
extern const char* const kPackSources[];
extern const char* const kPackNames[];
extern const std::size_t kPackCount;
}  // namespace canonical

namespace {

// Splits on whitespace, keeping "double quoted" runs together (quotes dropped).
std::vector<std::string> tokenize(std::string_view line) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
    if (i >= line.size()) break;
    std::string tok;
    if (line[i] == '"') {
      auto end = line.find('"', i + 1);
      if (end == std::string_view::npos) throw Error(ErrorCode::InvalidPack, "unterminated quote");
      tok = std::string(line.substr(i + 1, end - i - 1));
      i = end + 1;
    } else {
      while (i < line.size() && line[i] != ' ' && line[i] != '\t') tok += line[i++];
    }
    out.push_back(std::move(tok));
  }
  return out;
}

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string part;
  while (std::getline(in, part, ',')) {
    if (!part.empty()) out.push_back(part);
  }
  return out;
}

void add_template(std::vector<TemplateVariantSet>& sets, TemplateSpec t, const std::string& vartype) {
  auto it = std::find_if(sets.begin(), sets.end(),
                         [&](const TemplateVariantSet& s) { return s.action_name == t.action_name; });
  if (it == sets.end()) {
    sets.push_back(TemplateVariantSet{t.action_name, vartype, {}});
    it = std::prev(sets.end());
  } else if (it->required_var_type != vartype) {
    throw Error(ErrorCode::InvalidPack, "action '" + t.action_name + "' declared under two #vartype tags");
  }
  it->variants.push_back(std::move(t));
}

}  // namespace

const TemplateVariantSet* SelectionTarget::find_action(std::string_view action) const {
  for (const auto& s : packs)
    if (s.action_name == action) return &s;
  return nullptr;
}

const TemplateVariantSet* ToolRegistration::find_action(std::string_view action) const {
  for (const auto& s : packs)
    if (s.action_name == action) return &s;
  return nullptr;
}

const SelectionTarget* ToolRegistration::find_target(std::string_view name) const {
  for (const auto& t : selection_targets)
    if (t.name == name) return &t;
  return nullptr;
}

std::vector<Recognizer> tool_recognizers(const ToolRegistration& tool) {
  std::vector<Recognizer> out;
  for (const auto& set : tool.packs)
    for (const auto& t : set.variants) out.push_back(compile_recognizer(t));
  return out;
}

void validate_variant_sets(const std::vector<TemplateVariantSet>& sets, std::string_view owner) {
  std::set<std::string> actions;
  for (const auto& s : sets) {
    if (s.variants.empty())
      throw Error(ErrorCode::InvalidPack, std::string(owner) + ": action '" + s.action_name + "' has no templates");
    if (!actions.insert(s.action_name).second)
      throw Error(ErrorCode::InvalidPack, std::string(owner) + ": action '" + s.action_name + "' declared twice");
    std::set<std::string> dialects;
    for (const auto& v : s.variants) {
      if (v.action_name != s.action_name)
        throw Error(ErrorCode::InvalidPack, std::string(owner) + ": template '" + v.template_id +
                                                "' is filed under the wrong action");
      if (!dialects.insert(v.dialect).second)
        throw Error(ErrorCode::InvalidPack, std::string(owner) + ": action '" + s.action_name +
                                                "' has two templates for dialect '" + v.dialect + "'");
    }
  }
}

PackFile parse_pack(std::string_view text, std::string_view origin) {
  PackFile pack;
  std::vector<std::string> lines;
  {
    std::string all(text);
    std::stringstream in(all);
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      lines.push_back(line);
    }
  }

  ToolRegistration* tool = nullptr;
  SelectionTarget* target = nullptr;
  std::string vartype;

  auto where = [&](std::size_t i) { return std::string(origin) + ":" + std::to_string(i + 1) + ": "; };

  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::string& line = lines[i];
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    if (line.rfind("# ", 0) == 0 || line == "#") continue;
    try {
      auto fields = tokenize(line);
      const std::string& directive = fields[0];
      if (directive == "#tool") {
        if (fields.size() < 2) throw Error(ErrorCode::InvalidPack, "#tool needs a name");
        pack.tools.emplace_back();
        tool = &pack.tools.back();
        target = nullptr;
        vartype.clear();
        tool->tool_name = fields[1];
        for (std::size_t f = 2; f < fields.size(); ++f) {
          auto eq = fields[f].find('=');
          std::string key = fields[f].substr(0, eq);
          std::string value = eq == std::string::npos ? "" : fields[f].substr(eq + 1);
          if (key == "view") tool->view_id = value;
          else if (key == "state") tool->state_model = value;
          else if (key == "preprocess") tool->preprocess_id = value;
          else throw Error(ErrorCode::InvalidPack, "unknown #tool option '" + key + "'");
        }
      } else if (directive == "#param") {
        if (!tool || fields.size() != 3) throw Error(ErrorCode::InvalidPack, "#param <name> <types> inside a #tool");
        tool->params.push_back(ParamSpec{fields[1], split_commas(fields[2])});
      } else if (directive == "#message") {
        if (!tool) throw Error(ErrorCode::InvalidPack, "#message outside a #tool");
        auto start = line.find_first_not_of(" \t", directive.size());
        tool->type_error_message = start == std::string::npos ? "" : line.substr(start);
      } else if (directive == "#target") {
        if (!tool || fields.size() < 2) throw Error(ErrorCode::InvalidPack, "#target \"<name>\" inside a #tool");
        tool->selection_targets.push_back(SelectionTarget{fields[1], std::nullopt, {}});
        target = &tool->selection_targets.back();
        vartype.clear();
        for (std::size_t f = 2; f < fields.size(); ++f) {
          if (fields[f].rfind("tool=", 0) == 0) target->tool = fields[f].substr(5);
          else throw Error(ErrorCode::InvalidPack, "unknown #target option '" + fields[f] + "'");
        }
      } else if (directive == "#vartype") {
        if (fields.size() != 2) throw Error(ErrorCode::InvalidPack, "#vartype takes one type tag");
        vartype = fields[1];
      } else if (directive == "#template") {
        if (!tool) throw Error(ErrorCode::InvalidPack, "#template outside a #tool");
        if (i + 1 >= lines.size()) throw Error(ErrorCode::InvalidPack, "#template without a body line");
        TemplateSpec t = parse_template(line + "\n" + lines[i + 1]);
        ++i;
        add_template(target ? target->packs : tool->packs, std::move(t), vartype);
      } else if (directive == "#preprocess") {
        if (fields.size() != 3 || i + 1 >= lines.size())
          throw Error(ErrorCode::InvalidPack, "#preprocess <id> <output-var> followed by a body line");
        Preprocess p;
        p.id = fields[1];
        p.output_var = fields[2];
        p.code = make_template(p.id, "preprocess", "", {BlankSpec{"IN", BlankKind::Ident, BlankSource::EnvResolved}},
                               lines[i + 1]);
        ++i;
        pack.preprocesses.push_back(std::move(p));
      } else {
        throw Error(ErrorCode::InvalidPack, "unknown directive '" + directive + "'");
      }
    } catch (const Error& e) {
      throw Error(ErrorCode::InvalidPack, where(i) + e.what());
    }
  }

  for (const auto& t : pack.tools) {
    validate_variant_sets(t.packs, t.tool_name);
    for (const auto& target : t.selection_targets) validate_variant_sets(target.packs, t.tool_name + "/" + target.name);
  }
  return pack;
}

PackFile load_pack_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  if (!std::filesystem::is_directory(dir, ec))
    throw Error(ErrorCode::InvalidPack, "pack directory '" + dir.string() + "' does not exist");
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".pack") files.push_back(entry.path());
  }
  if (files.empty()) throw Error(ErrorCode::InvalidPack, "no .pack files in '" + dir.string() + "'");
  std::sort(files.begin(), files.end());

  PackFile out;
  for (const auto& f : files) {
    std::ifstream in(f, std::ios::binary);
    std::stringstream buf;
    buf << in.rdbuf();
    PackFile part = parse_pack(buf.str(), f.filename().string());
    for (auto& t : part.tools) out.tools.push_back(std::move(t));
    for (auto& p : part.preprocesses) out.preprocesses.push_back(std::move(p));
  }
  return out;
}

const PackFile& canonical_packs() {
  static const PackFile packs = [] {
    PackFile out;
    for (std::size_t i = 0; i < canonical::kPackCount; ++i) {
      PackFile part = parse_pack(canonical::kPackSources[i], canonical::kPackNames[i]);
      for (auto& t : part.tools) out.tools.push_back(std::move(t));
      for (auto& p : part.preprocesses) out.preprocesses.push_back(std::move(p));
    }
    return out;
  }();
  return packs;
}

}  // namespace cellsync

#include "cellsync/session.hpp"
#include "support/session_fixture.hpp"

#include "doctest.h"

#include <set>

using namespace cellsync;
using namespace cellsync::testing;

namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::ParseError;
}


}  // namespace

TEST_CASE("registration errors") {
  auto s = make_session(notebook_of({kCensusCell}));
  CHECK(code_of([&] { s->register_pack(canonical_packs()); }) == ErrorCode::DuplicateToolName);

  ToolRegistration bad;
  bad.tool_name = "broken";
  bad.state_model = "nonsense";
  CHECK(code_of([&] { s->register_tool(bad); }) == ErrorCode::InvalidPack);
  bad.state_model.reset();
  bad.preprocess_id = "missing";
  CHECK(code_of([&] { s->register_tool(bad); }) == ErrorCode::InvalidPack);
  bad.preprocess_id.reset();
  bad.params.push_back({"data", {}});
  CHECK(code_of([&] { s->register_tool(bad); }) == ErrorCode::InvalidPack);

  Preprocess two_blanks{"p", parse_template("#template p p minitable IN:IDENT:ACTION X:IDENT:ACTION\nout = $IN.$X"), "out"};
  CHECK(code_of([&] { s->register_preprocess(two_blanks); }) == ErrorCode::InvalidPack);
  CHECK(s->tools().size() == 4);
}

TEST_CASE("invoke_tool") {
  auto s = make_session(notebook_of({kCensusCell, "n = 3", "%%mage table df", "%%mage table n", "%%mage nope df",
                                     "%%mage table df n", "x = 1", "%%mage table missing"}));
  const ToolInstance& t = s->invoke_tool("cell-3");
  CHECK(t.instance_id == "table@cell-3");
  CHECK(t.displayed_var == "df");
  CHECK(t.data.hash == minitable::snapshot(minitable::census_fixture()).hash);
  CHECK(t.next_seq == 1);
  CHECK(code_of([&] { s->invoke_tool("cell-3"); }) == ErrorCode::InstanceExists);

  try {
    s->invoke_tool("cell-4");
    FAIL("expected a type error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::TypeCheckFailed);
    REQUIRE(e.tool_message());
    CHECK(*e.tool_message() == "table can only show table-like data; pass a variable holding a table");
  }
  CHECK(code_of([&] { s->invoke_tool("cell-5"); }) == ErrorCode::UnknownTool);
  CHECK(code_of([&] { s->invoke_tool("cell-6"); }) == ErrorCode::ArityMismatch);
  CHECK(code_of([&] { s->invoke_tool("cell-7"); }) == ErrorCode::NotAnInvocation);
  CHECK(code_of([&] { s->invoke_tool("cell-8"); }) == ErrorCode::UnboundVariable);
  CHECK(code_of([&] { s->invoke_tool("cell-99"); }) == ErrorCode::UnknownCell);
  CHECK(s->instances().size() == 1);
}

TEST_CASE("invoke picks up sequence numbers already in the cell") {
  Notebook nb = notebook_of({kCensusCell, "%%mage table df"});
  nb.cells[1].lines.push_back({"df = df[df.age < 65]", Provenance::generated("table@cell-2", 7, "table.filter")});
  auto s = make_session(nb);
  CHECK(s->invoke_tool("cell-2").next_seq == 8);
  CHECK(s->auto_invoke().empty());
}

TEST_CASE("auto_invoke reports failures per cell") {
  auto s = make_session(notebook_of({kCensusCell, "%%mage table df", "%%mage slider df", "%%mage nope df"}));
  auto failures = s->auto_invoke();
  REQUIRE(failures.size() == 2);
  CHECK(failures[0].first == "cell-3");
  CHECK(failures[0].second.code() == ErrorCode::TypeCheckFailed);
  CHECK(failures[1].first == "cell-4");
  CHECK(failures[1].second.code() == ErrorCode::UnknownTool);
  CHECK(s->instance_for_cell("cell-2"));
}

TEST_CASE("preprocess runs sandboxed and feeds the tool") {
  auto s = make_session(notebook_of({kCensusCell, "%%mage young df"}));
  PackFile pack = parse_pack(
      "#preprocess youngest out\n"
      "out = head(sort_by($IN, \"age\"), 3)\n"
      "#tool young view=DataGrid preprocess=youngest\n"
      "#param data table\n"
      "#vartype table\n"
      "#template young.drop drop-column minitable DF:IDENT:ENV NAME:STRING:ACTION\n"
      "$DF = drop_col($DF, $NAME)\n");
  s->register_pack(pack);
  const ToolInstance& t = s->invoke_tool("cell-2");
  auto body = nlohmann::json::parse(t.data.body);
  REQUIRE(body["rows"].size() == 3);
  CHECK(body["rows"][0][0] == 19);
  CHECK(body["rows"][2][0] == 23);
  // the user's df is untouched
  CHECK(s->get_variable("df").hash == minitable::snapshot(minitable::census_fixture()).hash);
  CHECK(code_of([&] { s->get_variable("out"); }) == ErrorCode::UnboundVariable);
}

TEST_CASE("handoff: filter then data refresh") {
  auto s = make_session(notebook_of({kCensusCell, "%%mage table df"}));
  s->invoke_tool("cell-2");
  SyncResult r = s->handoff("table@cell-2", "filter", {{"COL", "age"}, {"EXPR", "< 65"}});
  const Cell& c = *s->notebook().find("cell-2");
  REQUIRE(c.lines.size() == 2);
  CHECK(c.lines[1].text == "df = df[df.age < 65]");
  CHECK(c.lines[1].prov == Provenance::generated("table@cell-2", 1, "table.filter"));
  CHECK(r.cell_text == "%%mage table df\ndf = df[df.age < 65]");
  CHECK(r.action.seq == 1);
  CHECK(r.action.bindings == BindingSet{{"COL", "age"}, {"EXPR", "< 65"}});

  OracleTable o = OracleTable::census();
  o.filter("age", "<", 65);
  CHECK(r.snapshot.hash == census_hash_after(o));
  for (const auto& row : nlohmann::json::parse(r.snapshot.body)["rows"]) CHECK(row[0].get<double>() < 65);
  CHECK(s->instance("table@cell-2").data == r.snapshot);
  CHECK(s->instance("table@cell-2").next_seq == 2);
}

TEST_CASE("handoff errors leave the document unchanged") {
  auto s = make_session(notebook_of({kCensusCell, "%%mage table df", "n = 850", "%%mage slider n"}));
  s->invoke_tool("cell-2");
  s->invoke_tool("cell-4");
  const Notebook before = s->notebook();
  CHECK(code_of([&] { s->handoff("table@cell-9", "filter", {}); }) == ErrorCode::NoInstance);
  CHECK(code_of([&] { s->handoff("table@cell-2", "explode", {}); }) == ErrorCode::UnknownAction);
  CHECK(code_of([&] { s->handoff("table@cell-2", "filter", {{"COL", "age"}}); }) == ErrorCode::MissingBinding);
  CHECK(code_of([&] { s->handoff("table@cell-2", "filter", {{"COL", "age"}, {"EXPR", "65"}}); }) ==
        ErrorCode::KindMismatch);
  CHECK(code_of([&] {
          s->handoff("table@cell-2", "filter", {{"COL", "age"}, {"EXPR", "< 65"}, {"DF", "other"}});
        }) == ErrorCode::InvalidParams);
  CHECK(code_of([&] {
          s->handoff("table@cell-2", "filter", {{"COL", "age"}, {"EXPR", "< 65"}, {"ZZ", "1"}});
        }) == ErrorCode::UnknownBlank);
  CHECK(code_of([&] { s->handoff("table@cell-2", "filter", {{"COL", "nope"}, {"EXPR", "< 1"}}); }) ==
        ErrorCode::ExecutionFailed);
  CHECK(code_of([&] { s->handoff("table@cell-2", "drop-column", {{"NAME", "\"zzz\""}}); }) ==
        ErrorCode::ExecutionFailed);
  CHECK(s->notebook() == before);
  CHECK(s->instance("table@cell-2").next_seq == 1);

  SyncResult slid = s->handoff("slider@cell-4", "set", {{"VALUE", "400"}});
  CHECK(slid.cell_text == "%%mage slider n\nn = 400");
  CHECK(slid.snapshot.body == "400");
}

TEST_CASE("variant choice follows the session dialect") {
  Notebook nb = notebook_of({kCensusCell, "%%mage table df"});
  auto s = std::make_unique<Session>(nb, test_backend(), SessionConfig{"dataframe", true});
  s->register_pack(canonical_packs());
  s->invoke_tool("cell-2");
  // the builtin backend cannot run the dataframe variant, so the handoff is rejected as a whole
  CHECK(code_of([&] { s->handoff("table@cell-2", "move-column", {{"NAME", "\"age\""}, {"IDX", "2"}}); }) ==
        ErrorCode::ExecutionFailed);
  CHECK(s->notebook() == nb);
}

TEST_CASE("compaction folds an insert and a later move into one insert") {
  auto s = make_session(notebook_of({kCensusCell, "%%mage table df"}));
  s->invoke_tool("cell-2");
  s->handoff("table@cell-2", "insert-column", {{"IDX", "2"}, {"NAME", "\"score\""}, {"VALUE", "1"}});
  SyncResult r = s->handoff("table@cell-2", "move-column", {{"NAME", "\"score\""}, {"IDX", "5"}});
  CHECK(r.compacted);
  const Cell& c = *s->notebook().find("cell-2");
  REQUIRE(c.lines.size() == 2);
  CHECK(c.lines[1].text == "df = df.insert(5, \"score\", 1)");
  CHECK(c.lines[1].prov.action_seq == 2);

  OracleTable o = OracleTable::census();
  o.insert(2, "score", 1);
  o.move("score", 5);
  CHECK(r.snapshot.hash == census_hash_after(o));

  // without compaction the same history appends
  auto naive = make_session(notebook_of({kCensusCell, "%%mage table df"}), SessionConfig{"minitable", false});
  naive->invoke_tool("cell-2");
  naive->handoff("table@cell-2", "insert-column", {{"IDX", "2"}, {"NAME", "\"score\""}, {"VALUE", "1"}});
  SyncResult n = naive->handoff("table@cell-2", "move-column", {{"NAME", "\"score\""}, {"IDX", "5"}});
  CHECK_FALSE(n.compacted);
  CHECK(generated_count(*naive->notebook().find("cell-2")) == 2);
  CHECK(n.snapshot.hash == r.snapshot.hash);
}

TEST_CASE("compaction stops at user code") {
  auto s = make_session(notebook_of({kCensusCell, "%%mage table df"}));
  s->invoke_tool("cell-2");
  s->handoff("table@cell-2", "filter", {{"COL", "age"}, {"EXPR", "< 65"}});
  s->on_code_edit("cell-2", "%%mage table df\ndf = df[df.age < 65]\ndf = sort_by(df, \"hours\")");
  s->handoff("table@cell-2", "filter", {{"COL", "age"}, {"EXPR", "< 65"}});
  SyncResult r = s->handoff("table@cell-2", "filter", {{"COL", "age"}, {"EXPR", "<65"}});
  CHECK(r.compacted);
  const Cell& c = *s->notebook().find("cell-2");
  REQUIRE(c.lines.size() == 4);
  CHECK(c.lines[1].prov.kind == Provenance::Kind::Frozen);
  CHECK(c.lines[2].prov.kind == Provenance::Kind::User);
  CHECK(c.lines[3].text == "df = df[df.age < 65]");
}

TEST_CASE("property: compact and naive handoffs agree with the oracle") {
  Gen g(2024);
  for (int trial = 0; trial < 40; ++trial) {
    auto compact = make_session(notebook_of({kCensusCell, "%%mage table df"}));
    auto naive = make_session(notebook_of({kCensusCell, "%%mage table df"}), SessionConfig{"minitable", false});
    compact->invoke_tool("cell-2");
    naive->invoke_tool("cell-2");
    OracleTable o = OracleTable::census();
    int fresh = 0;
    std::set<std::string> keys;
    std::int64_t last_seq = 0;
    std::size_t steps = 1 + g.below(6);
    for (std::size_t i = 0; i < steps; ++i) {
      TableOp op = random_table_op(g, o, fresh);
      keys.insert(op.state_key);
      SyncResult a = compact->handoff("table@cell-2", op.action, op.data);
      SyncResult b = naive->handoff("table@cell-2", op.action, op.data);
      CHECK(a.snapshot.hash == census_hash_after(o));
      CHECK(b.snapshot.hash == a.snapshot.hash);
      CHECK(a.action.seq > last_seq);
      last_seq = a.action.seq;
    }
    const Cell& c = *compact->notebook().find("cell-2");
    CHECK(generated_count(c) <= keys.size());
    std::vector<std::int64_t> seqs = seqs_of(c);
    CHECK(std::is_sorted(seqs.begin(), seqs.end()));
    CHECK(std::adjacent_find(seqs.begin(), seqs.end()) == seqs.end());
    CHECK(generated_count(*naive->notebook().find("cell-2")) == steps);
  }
}

TEST_CASE("get_variable runs the whole notebook without changing it") {
  auto s = make_session(notebook_of({kCensusCell, "%%mage table df", "df = head(df, 2)"}));
  s->invoke_tool("cell-2");
  const Notebook before = s->notebook();
  VariableSnapshot v = s->get_variable("df");
  CHECK(nlohmann::json::parse(v.body)["rows"].size() == 2);
  CHECK(s->get_variable("df") == v);
  CHECK(s->notebook() == before);
  CHECK(code_of([&] { s->get_variable("nothing"); }) == ErrorCode::UnboundVariable);

  // a stale cache would still see two rows
  s->on_code_edit("cell-3", "df = head(df, 4)");
  CHECK(nlohmann::json::parse(s->get_variable("df").body)["rows"].size() == 4);
}

TEST_CASE("on_code_edit: crop bounds flow back to the tool") {
  auto s = make_session(notebook_of({"img = gradient(900, 900)\nn = 850", "%%mage image img"}));
  s->invoke_tool("cell-2");
  s->handoff("image@cell-2", "crop", {{"OUT", "crop"}, {"Y1", "0"}, {"Y2", "850"}, {"X1", "0"}, {"X2", "850"}});

  EditResult e = s->on_code_edit("cell-2", "%%mage image img\ncrop = img[0:400, 0:850]");
  REQUIRE(e.notifications.size() == 2);
  CHECK(e.notifications[0].kind == ToolNotification::Kind::BindingUpdate);
  CHECK(e.notifications[0].seq == 1);
  CHECK(e.notifications[0].bindings ==
        BindingSet{{"OUT", "crop"}, {"Y1", "0"}, {"Y2", "400"}, {"X1", "0"}, {"X2", "850"}});
  CHECK(e.notifications[1].kind == ToolNotification::Kind::DataRefresh);
  CHECK(e.notifications[1].to_json()["kind"] == "data-refresh");

  // the pixels themselves are not shown by the image tool; the crop variable changed
  CHECK(nlohmann::json::parse(s->get_variable("crop").body)["shape"] == nlohmann::json::array({400, 850}));

  // reformatting is not a change
  EditResult spaced = s->on_code_edit("cell-2", "%%mage image img\ncrop  =  img[0:400,   0:850]");
  CHECK(spaced.notifications.empty());
  CHECK(s->notebook().find("cell-2")->lines[1].prov.is_generated());

  EditResult to_var = s->on_code_edit("cell-2", "%%mage image img\ncrop = img[0:n, 0:850]");
  REQUIRE(to_var.notifications.size() == 1);
  CHECK(to_var.notifications[0].kind == ToolNotification::Kind::DataRefresh);
  CHECK(s->notebook().find("cell-2")->lines[1].prov.kind == Provenance::Kind::User);
}

TEST_CASE("on_code_edit: an unrecognized line freezes what precedes it") {
  auto s = make_session(notebook_of({kCensusCell, "%%mage table df"}));
  s->invoke_tool("cell-2");
  s->handoff("table@cell-2", "filter", {{"COL", "age"}, {"EXPR", "< 65"}});
  s->handoff("table@cell-2", "insert-column", {{"IDX", "0"}, {"NAME", "\"k\""}, {"VALUE", "2"}});
  EditResult e = s->on_code_edit(
      "cell-2", "%%mage table df\ndf = df[df.age < 65]\ndf = df.insert(0, \"k\", 2)\ndf = foo(df)");
  REQUIRE(e.notifications.size() == 1);
  CHECK(e.notifications[0].kind == ToolNotification::Kind::DataRefresh);
  const Cell& c = *s->notebook().find("cell-2");
  CHECK(c.lines[1].prov.kind == Provenance::Kind::Frozen);
  CHECK(c.lines[2].prov.kind == Provenance::Kind::Frozen);
  CHECK(c.lines[3].prov.kind == Provenance::Kind::User);

  s->handoff("table@cell-2", "drop-column", {{"NAME", "\"k\""}});
  const Cell& after = *s->notebook().find("cell-2");
  REQUIRE(after.lines.size() == 5);
  CHECK(after.lines[4].text == "df = drop_col(df, \"k\")");
  CHECK(after.lines[4].prov.action_seq == 3);
}

TEST_CASE("on_code_edit: removed, added and failing lines") {
  auto s = make_session(notebook_of({kCensusCell, "%%mage table df", "x = 1"}));
  s->invoke_tool("cell-2");
  s->handoff("table@cell-2", "filter", {{"COL", "age"}, {"EXPR", "< 65"}});

  EditResult removed = s->on_code_edit("cell-2", "%%mage table df");
  REQUIRE(removed.notifications.size() == 2);
  CHECK(removed.notifications[0].kind == ToolNotification::Kind::ActionRemoved);
  CHECK(removed.notifications[0].seq == 1);

  EditResult added = s->on_code_edit("cell-2", "%%mage table df\ndf = drop_col(df, \"sex\")");
  REQUIRE(added.notifications.size() == 2);
  CHECK(added.notifications[0].kind == ToolNotification::Kind::ActionAdded);
  CHECK(added.notifications[0].action_name == "drop-column");
  CHECK(added.notifications[0].bindings == BindingSet{{"NAME", "\"sex\""}});
  CHECK(added.notifications[0].seq == 2);

  EditResult broken = s->on_code_edit("cell-2", "%%mage table df\ndf = drop_col(df, \"nope\")");
  REQUIRE(broken.notifications.size() == 2);
  CHECK(broken.notifications[0].kind == ToolNotification::Kind::BindingUpdate);
  CHECK(broken.notifications[1].kind == ToolNotification::Kind::ExecutionError);
  CHECK(s->notebook().find("cell-2")->text() == "%%mage table df\ndf = drop_col(df, \"nope\")");

  CHECK(code_of([&] { s->on_code_edit("cell-2", "%%mage table other\n"); }) == ErrorCode::InvocationLineModified);
  EditResult plain = s->on_code_edit("cell-3", "x = 2");
  CHECK_FALSE(plain.instance_id);
  CHECK(plain.notifications.empty());
  CHECK(s->notebook().find("cell-3")->text() == "x = 2");
  CHECK(code_of([&] { s->on_code_edit("cell-9", ""); }) == ErrorCode::UnknownCell);
}

TEST_CASE("transfer_selection into a new table cell") {
  auto s = make_session(notebook_of({kCensusCell, "%%mage plot df", "y = 1"}));
  s->invoke_tool("cell-2");
  SelectionSpec sel = SelectionSpec::from_json(nlohmann::json::parse(R"([
    [{"column":"education","op":"==","value":"Doctorate"},{"column":"income","op":"==","value":">50K"}],
    [{"column":"education","op":"==","value":"Prof-school"},{"column":"income","op":"==","value":">50K"}]
  ])"));
  TransferResult t = s->transfer_selection("plot@cell-2", sel, "Show in table");
  CHECK(t.variable == "sel_1");
  CHECK(t.cell_id == "cell-4");
  REQUIRE(t.instance_id);
  CHECK(*t.instance_id == "table@cell-4");
  REQUIRE(s->notebook().cells.size() == 4);
  CHECK(s->notebook().cells[2].id == "cell-4");
  const Cell& c = s->notebook().cells[2];
  CHECK(c.lines[0].text == "%%mage table sel_1");
  for (std::size_t i = 1; i < c.lines.size(); ++i) CHECK(c.lines[i].prov.kind == Provenance::Kind::Frozen);

  // oracle: rows with those educations earning >50K
  minitable::Table all = minitable::census_fixture();
  std::vector<std::string> sexes;
  for (std::size_t r = 0; r < all.rows(); ++r) {
    const auto& edu = std::get<std::string>(all.data[1][r]);
    if ((edu == "Doctorate" || edu == "Prof-school") && std::get<std::string>(all.data[3][r]) == ">50K")
      sexes.push_back(std::get<std::string>(all.data[2][r]));
  }
  auto rows = nlohmann::json::parse(t.snapshot.body)["rows"];
  CHECK(rows.size() == sexes.size());
  CHECK(rows.size() == 5);
  for (const auto& row : rows) CHECK(row[2] == "Male");

  // the new table tool can act on the selection
  SyncResult r = s->handoff("table@cell-4", "drop-column", {{"NAME", "\"hours\""}});
  CHECK(r.cell_text.ends_with("sel_1 = drop_col(sel_1, \"hours\")"));

  TransferResult second = s->transfer_selection("plot@cell-2", sel, "Show in table");
  CHECK(second.variable == "sel_2");
  CHECK(second.cell_id == "cell-5");
}

TEST_CASE("transfer_selection as code and its errors") {
  auto s = make_session(notebook_of({kCensusCell, "%%mage plot df", "y = sel_4"}));
  s->invoke_tool("cell-2");
  SelectionSpec sel{{{{"age", "<", 30}, {"sex", "==", "Female"}}}};
  TransferResult t = s->transfer_selection("plot@cell-2", sel, "Selection code");
  CHECK(t.variable == "sel_5");
  CHECK_FALSE(t.instance_id);
  const Cell& c = *s->notebook().find(t.cell_id);
  REQUIRE(c.lines.size() == 2);
  CHECK(c.lines[0].text == "sel_5 = df[df.age < 30]");
  CHECK(c.lines[1].text == "sel_5 = sel_5[sel_5.sex == \"Female\"]");
  CHECK(seqs_of(c) == std::vector<std::int64_t>{1, 2});
  auto rows = nlohmann::json::parse(t.snapshot.body)["rows"];
  std::size_t expected = 0;
  minitable::Table all = minitable::census_fixture();
  for (std::size_t r = 0; r < all.rows(); ++r)
    expected += std::get<double>(all.data[0][r]) < 30 && std::get<std::string>(all.data[2][r]) == "Female";
  CHECK(rows.size() == expected);

  const Notebook before = s->notebook();
  CHECK(code_of([&] { s->transfer_selection("plot@cell-2", {}, "Selection code"); }) == ErrorCode::EmptySelection);
  CHECK(code_of([&] { s->transfer_selection("plot@cell-2", SelectionSpec{{{}}}, "Selection code"); }) ==
        ErrorCode::EmptySelection);
  CHECK(code_of([&] { s->transfer_selection("plot@cell-2", sel, "Elsewhere"); }) == ErrorCode::UnknownTarget);
  SelectionSpec bad_col{{{{"nope", "<", 1}}}};
  CHECK(code_of([&] { s->transfer_selection("plot@cell-2", bad_col, "Show in table"); }) ==
        ErrorCode::ExecutionFailed);
  CHECK(s->notebook() == before);
  CHECK(code_of([] { SelectionSpec::from_json(nlohmann::json{{"terms", 3}}); }) == ErrorCode::InvalidParams);
}

TEST_CASE("property: replaying recorded handoffs reproduces the notebook") {
  Gen g(99);
  for (int trial = 0; trial < 15; ++trial) {
    auto live = make_session(notebook_of({kCensusCell, "%%mage table df"}));
    live->invoke_tool("cell-2");
    OracleTable o = OracleTable::census();
    int fresh = 0;
    std::vector<TableOp> trace;
    for (std::size_t i = 0, n = 1 + g.below(5); i < n; ++i) {
      trace.push_back(random_table_op(g, o, fresh));
      live->handoff("table@cell-2", trace.back().action, trace.back().data);
    }
    auto replay = make_session(notebook_of({kCensusCell, "%%mage table df"}));
    replay->invoke_tool("cell-2");
    for (const auto& op : trace) replay->handoff("table@cell-2", op.action, op.data);
    CHECK(replay->notebook() == live->notebook());
    CHECK(replay->get_variable("df").hash == live->get_variable("df").hash);
  }
}

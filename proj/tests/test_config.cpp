#include <set>
#include <string>

#include "doctest.h"
#include "hiersum/config.hpp"
#include "hiersum/errors.hpp"

using namespace hiersum;

TEST_SUITE_BEGIN("config");

TEST_CASE("key=value text parses with comments, blanks, and whitespace") {
  const KvMap kv = parse_kv_text(
      "# leading comment\n"
      "\n"
      "  d_model = 32  # trailing comment\n"
      "name=plain\n"
      "empty =\n");
  CHECK(kv.size() == 3);
  CHECK(kv.at("d_model") == "32");
  CHECK(kv.at("name") == "plain");
  CHECK(kv.at("empty") == "");
}

TEST_CASE("later assignments to the same key win") {
  const KvMap kv = parse_kv_text("a=1\na=2\n");
  CHECK(kv.at("a") == "2");
}

TEST_CASE("a line without '=' is rejected with its line number") {
  CHECK_THROWS_WITH_AS(parse_kv_text("a=1\nbroken line\n"),
                       doctest::Contains("line 2"), ValidationError);
  CHECK_THROWS_AS(parse_kv_text("=value\n"), ValidationError);
}

TEST_CASE("typed lookups parse or reject values") {
  const KvMap kv = parse_kv_text("flag=true\noff=0\nn=42\nx=2.5\nbad=maybe\n");
  CHECK(kv_bool(kv, "flag", false));
  CHECK_FALSE(kv_bool(kv, "off", true));
  CHECK(kv_bool(kv, "absent", true));
  CHECK(kv_int(kv, "n", 0) == 42);
  CHECK(kv_double(kv, "x", 0.0) == 2.5);
  CHECK_THROWS_AS(kv_bool(kv, "bad", false), ValidationError);
  CHECK_THROWS_AS(kv_int(kv, "x", 0), ValidationError);
  CHECK_THROWS_AS(kv_int(kv, "bad", 0), ValidationError);
}

TEST_CASE("formatting then parsing a map is the identity") {
  KvMap kv;
  kv["b"] = "2";
  kv["a"] = "hello world";
  CHECK(parse_kv_text(format_kv_text(kv)) == kv);
}

TEST_CASE("an experiment spec survives a serialization round trip") {
  ExperimentSpec spec;
  spec.model.d_model = 48;
  spec.model.n_heads = 4;
  spec.model.use_sod = true;
  spec.model.hier_enc = true;
  spec.model.hier_dec = false;
  spec.model.pos_restart = true;
  spec.train.learning_rate = 3e-4;
  spec.train.max_steps = 123;
  spec.train.seed = 9;
  spec.gen.max_length = 20;
  spec.gen.min_length = 2;
  spec.train_data = "train.jsonl";
  spec.eval_data = "eval.jsonl";
  spec.out_dir = "out";

  const ExperimentSpec back = experiment_from_kv(experiment_to_kv(spec));
  CHECK(back.model.d_model == 48);
  CHECK(back.model.n_heads == 4);
  CHECK(back.model.use_sod);
  CHECK(back.model.hier_enc);
  CHECK_FALSE(back.model.hier_dec);
  CHECK(back.model.pos_restart);
  CHECK(back.train.learning_rate == 3e-4);
  CHECK(back.train.max_steps == 123);
  CHECK(back.train.seed == 9);
  CHECK(back.gen.max_length == 20);
  CHECK(back.gen.min_length == 2);
  CHECK(back.train_data == "train.jsonl");
  CHECK(back.eval_data == "eval.jsonl");
  CHECK(back.out_dir == "out");
}

TEST_CASE("unknown experiment keys are rejected by name") {
  KvMap kv;
  kv["train_data"] = "t.jsonl";
  kv["mystery"] = "1";
  CHECK_THROWS_WITH_AS(experiment_from_kv(kv), doctest::Contains("mystery"), ValidationError);
}

TEST_CASE("vocab_size cannot be set by hand") {
  KvMap kv;
  kv["vocab_size"] = "100";
  CHECK_THROWS_AS(experiment_from_kv(kv), ValidationError);
}

TEST_CASE("hierarchical attention without start-of-document tokens is rejected") {
  ExperimentSpec spec;
  spec.train_data = "t.jsonl";
  spec.model.use_sod = false;

  spec.model.hier_enc = true;
  spec.model.hier_dec = false;
  CHECK_THROWS_WITH_AS(spec.validate(), doctest::Contains("use_sod"), ValidationError);

  spec.model.hier_enc = false;
  spec.model.hier_dec = true;
  CHECK_THROWS_AS(spec.validate(), ValidationError);

  spec.model.hier_dec = false;
  CHECK_NOTHROW(spec.validate());
}

TEST_CASE("the ablation grid has six rows from full model to plain baseline") {
  const std::vector<AblationRow> grid = ablation_grid();
  REQUIRE(grid.size() == 6);

  CHECK(grid[0].name == "full");
  CHECK(grid[0].use_sod);
  CHECK(grid[0].hier_enc);
  CHECK(grid[0].hier_dec);
  CHECK(grid[0].pos_restart);

  CHECK(grid[5].name == "plain");
  CHECK_FALSE(grid[5].use_sod);
  CHECK_FALSE(grid[5].hier_enc);
  CHECK_FALSE(grid[5].hier_dec);
  CHECK_FALSE(grid[5].pos_restart);

  std::set<std::string> names;
  for (const AblationRow& row : grid) {
    names.insert(row.name);
    if (row.hier_enc || row.hier_dec) CHECK(row.use_sod);
    if (row.pos_restart) CHECK(row.use_sod);
  }
  CHECK(names.size() == 6);
}

TEST_CASE("applying a grid row only touches the four component flags") {
  ModelConfig mc;
  mc.d_model = 48;
  mc.use_sod = true;
  mc.hier_enc = true;
  mc.hier_dec = true;
  mc.pos_restart = true;

  AblationRow row;
  row.name = "plain";
  row.use_sod = false;
  row.hier_enc = false;
  row.hier_dec = false;
  row.pos_restart = false;
  apply_ablation_row(row, mc);

  CHECK(mc.d_model == 48);
  CHECK_FALSE(mc.use_sod);
  CHECK_FALSE(mc.hier_enc);
  CHECK_FALSE(mc.hier_dec);
  CHECK_FALSE(mc.pos_restart);
}

TEST_SUITE_END();

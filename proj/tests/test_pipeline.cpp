#include <filesystem>
#include <sstream>

#include "doctest.h"
#include "fileio.hpp"
#include "redecode/checkpoint.hpp"
#include "redecode/error.hpp"
#include "redecode/pipeline.hpp"
#include "redecode/run_config.hpp"

using namespace redecode;
namespace fs = std::filesystem;

namespace {

const fs::path kToyPairs = fs::path(REDECODE_TEST_DATA) / "toy_pairs.tsv";

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("redecode_pipeline_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

RunConfig tiny(const std::string& variant) {
  return parse_run_config("variant = " + variant + "\ntrain_pairs = " + kToyPairs.string() +
                          "\nembedding_dim = 6\nhidden_units = 8\nlatent_dim = 5\nbatch_size = 8\n"
                          "epochs = 5\nmax_steps = 6\ncheckpoint_every = 3\nlearning_rate = 0.01\nseed = 11\n");
}

// One model shared by the read-only cases below.
const fs::path& trained_checkpoint() {
  static const fs::path path = [] {
    const auto dir = scratch("shared");
    return run_train(tiny("vae-itervar"), dir).checkpoint;
  }();
  return path;
}

std::size_t count_lines(const std::string& s) {
  std::size_t n = 0;
  for (const char c : s) n += c == '\n';
  return n;
}

}  // namespace

TEST_CASE("training writes checkpoints and logs") {
  const auto dir = scratch("train");
  const auto summary = run_train(tiny("vae-iterdec2"), dir);
  CHECK(summary.steps == 6);
  CHECK(summary.training_pairs == 32);
  CHECK(summary.rejected_pairs == 0);
  CHECK(summary.vocab_size == 56);
  CHECK(summary.final_ce.size() == 2);
  CHECK(summary.final_kl >= 0.0);
  CHECK(fs::exists(dir / "checkpoints" / "step_3.ckpt"));
  CHECK(fs::exists(dir / "checkpoints" / "step_6.ckpt"));
  CHECK(summary.checkpoint == dir / "checkpoints" / "final.ckpt");

  const auto log = io::read_file(dir / "logs" / "train.log");
  CHECK(count_lines(log) == 6);
  CHECK(log.rfind("1\t", 0) == 0);
  const auto epochs = io::read_file(dir / "logs" / "epochs.log");
  CHECK(epochs.rfind("epoch\tsteps\tmean_total\tmean_kl\tmean_ce_dec1\tmean_ce_dec2\n", 0) == 0);
}

TEST_CASE("training is reproducible and the seed override takes effect") {
  const auto a = run_train(tiny("vae-s"), scratch("seed_a"));
  const auto b = run_train(tiny("vae-s"), scratch("seed_b"));
  const auto c = run_train(tiny("vae-s"), scratch("seed_c"), 12);
  CHECK(io::read_file(a.checkpoint) == io::read_file(b.checkpoint));
  CHECK(io::read_file(a.checkpoint) != io::read_file(c.checkpoint));
  CHECK(load_model(c.checkpoint).train.seed == 12);
}

TEST_CASE("training rejects unusable data") {
  const auto dir = scratch("bad_data");
  io::write_file_atomic(dir / "p.tsv", "...\t!!!\n");
  auto cfg = tiny("vae-s");
  cfg.train_pairs = dir / "p.tsv";
  CHECK_THROWS_AS(run_train(cfg, dir), DataError);
  cfg.train_pairs = dir / "missing.tsv";
  CHECK_THROWS_AS(run_train(cfg, dir), DataError);
}

TEST_CASE("loaded checkpoints restore the model and vocabulary") {
  const auto loaded = load_model(trained_checkpoint());
  CHECK(loaded.model.decoders.size() == 2);
  CHECK(loaded.vocab.size() == 56);
  CHECK(loaded.model.config.multisample_enabled);
  CHECK(loaded.train.seed == 11);
  CHECK_THROWS_AS(load_model(trained_checkpoint().parent_path() / "nope.ckpt"), DataError);
  io::write_file_atomic(trained_checkpoint().parent_path() / "junk.ckpt", "not a model");
  CHECK_THROWS_AS(load_model(trained_checkpoint().parent_path() / "junk.ckpt"), CheckpointError);
}

TEST_CASE("input encoding truncates and appends eos") {
  const auto loaded = load_model(trained_checkpoint());
  CHECK(encode_input(loaded, "?!").empty());
  std::string long_input;
  for (int i = 0; i < 40; ++i) long_input += "word ";
  const auto ids = encode_input(loaded, long_input);
  CHECK(ids.size() == loaded.model.config.max_len + 1);
  CHECK(ids.back() == kEosId);
  CHECK(ids.front() == kUnkId);
}

TEST_CASE("generation prints one line per decoder and is seeded") {
  const auto loaded = load_model(trained_checkpoint());
  const std::vector<std::string> inputs{"how do i learn to cook", "", "what is the best phone"};
  const auto out = run_generate(loaded, inputs, 5);
  CHECK(count_lines(out) == 6);
  std::istringstream in(out);
  std::string line;
  for (int k = 0; std::getline(in, line); ++k) {
    CHECK(line.rfind(std::to_string(k % 2 + 1) + "\t", 0) == 0);
  }
  CHECK(out == run_generate(loaded, inputs, 5));
  CHECK(paraphrase(loaded, "", 5).size() == 2);
  CHECK(paraphrase(loaded, "", 5)[0].empty());
}

TEST_CASE("evaluation writes reports for each decoder and the chain") {
  const auto dir = scratch("eval");
  const auto loaded = load_model(trained_checkpoint());
  const auto result = run_eval(loaded, kToyPairs, dir, 1);
  CHECK(result.pairs == 32);
  REQUIRE(result.reports.size() == 3);
  CHECK(result.reports[2].system == "decoder1_vs_decoder2");
  CHECK(fs::exists(dir / "reports" / "scores.csv"));
  CHECK(fs::exists(dir / "reports" / "scores.txt"));
  CHECK(count_lines(io::read_file(dir / "reports" / "outputs.tsv")) == 1 + 32 * 2);
  CHECK(io::read_file(dir / "reports" / "scores.csv") == format_report_csv(result.reports));

  io::write_file_atomic(dir / "empty.tsv", "?\t!\n");
  CHECK_THROWS_AS(run_eval(loaded, dir / "empty.tsv", dir, 1), DataError);
}

TEST_CASE("attention dumps label rows and columns by token") {
  const auto dir = scratch("attn");
  const auto loaded = load_model(trained_checkpoint());
  const auto matrices = attention_matrices(loaded, "the cat sits on the chair", 3);
  REQUIRE(matrices.size() == 2);
  CHECK(matrices[0].column_labels ==
        std::vector<std::string>{"the", "cat", "sits", "on", "the", "chair", "</s>"});
  CHECK(matrices[1].column_labels.size() == matrices[0].row_labels.size());
  for (const auto& m : matrices) {
    REQUIRE(m.weights.size() == m.row_labels.size());
    for (const auto& row : m.weights) {
      double sum = 0.0;
      for (const double w : row) sum += w;
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
  const auto paths = run_attn_dump(loaded, "the cat sits on the chair", dir, 3);
  REQUIRE(paths.size() == 2);
  CHECK(paths[0] == dir / "decoder1.csv");
  const auto csv = io::read_file(paths[0]);
  CHECK(csv.rfind(",the,cat,sits,on,the,chair,</s>\n", 0) == 0);
  CHECK(count_lines(csv) == 1 + matrices[0].row_labels.size());
  CHECK_THROWS_AS(attention_matrices(loaded, "...", 3), DataError);

  const AttentionMatrix quoted{{"a,b"}, {"x"}, {{1.0}}};
  CHECK(format_attention_csv(quoted) == ",x\n\"a,b\",1\n");
}

TEST_CASE("attention dumps need an attention model") {
  const auto dir = scratch("attn_final");
  const auto summary = run_train(tiny("vae-s"), dir);
  const auto loaded = load_model(summary.checkpoint);
  CHECK_THROWS_AS(attention_matrices(loaded, "how do i learn", 1), ContractError);
}

#include <filesystem>

#include "doctest.h"
#include "fileio.hpp"
#include "redecode/error.hpp"
#include "redecode/run_config.hpp"

using namespace redecode;
namespace fs = std::filesystem;

namespace {

std::string message_of(std::string_view text) {
  try {
    parse_run_config(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("variants fix decoder count, attention and multi-sample") {
  struct Expect {
    const char* name;
    std::size_t decoders;
    AttentionMode mode;
    bool multisample;
  };
  const Expect table[] = {
      {"vae-s", 1, AttentionMode::final_state, false},  {"vae-var", 1, AttentionMode::memory, true},
      {"vae-iterdec2", 2, AttentionMode::memory, false}, {"vae-iterdec3", 3, AttentionMode::memory, false},
      {"vae-itervar", 2, AttentionMode::memory, true},
  };
  for (const auto& e : table) {
    const std::string name = e.name;
    CAPTURE(name);
    auto cfg = parse_run_config(std::string("variant = ") + e.name + "\ntrain_pairs = p.tsv\n");
    CHECK(cfg.variant == e.name);
    CHECK(cfg.model.num_decoders == e.decoders);
    CHECK(cfg.model.attention_mode == e.mode);
    CHECK(cfg.model.multisample_enabled == e.multisample);
    cfg.model.vocab_size = 10;
    CHECK_NOTHROW(cfg.model.validate());
  }
  CHECK(known_variants().size() == 5);
}

TEST_CASE("unknown variants list the valid names") {
  const auto msg = message_of("variant = vae-big\ntrain_pairs = p\n");
  CHECK(msg.find("vae-big") != std::string::npos);
  CHECK(msg.find("vae-s, vae-var, vae-iterdec2, vae-iterdec3, vae-itervar") != std::string::npos);
}

TEST_CASE("every documented key is parsed") {
  const auto cfg = parse_run_config(R"(
# toy run
variant = vae-itervar
train_pairs = data/train.tsv   # relative
test_pairs = /abs/test.tsv
embeddings = vec.txt
embedding_dim = 16
hidden_units = 32
latent_dim = 24
max_len = 10
learning_rate = 0.005
batch_size = 8
epochs = 3
max_steps = 100
kl_anneal_steps = 50
kl_schedule = sigmoid
checkpoint_every = 25
seed = 18446744073709551615
word_dropout_prob = 0.25
gradient_clip_norm = 1.5
multisample_weight = 0.5
min_frequency = 2
lowercase = false
multisample_ce_all = true
final_state = cell
inference_latent = mean
)",
                                    "/runs/a");
  CHECK(cfg.train_pairs == fs::path("/runs/a/data/train.tsv"));
  CHECK(cfg.test_pairs == fs::path("/abs/test.tsv"));
  CHECK(cfg.embeddings == fs::path("/runs/a/vec.txt"));
  CHECK(cfg.model.embedding_dim == 16);
  CHECK(cfg.model.hidden_units == 32);
  CHECK(cfg.model.latent_dim == 24);
  CHECK(cfg.model.max_len == 10);
  CHECK(cfg.train.learning_rate == 0.005);
  CHECK(cfg.train.batch_size == 8);
  CHECK(cfg.train.epochs == 3);
  CHECK(cfg.train.max_steps == 100);
  CHECK(cfg.train.kl_anneal_steps == 50);
  CHECK(cfg.train.kl_schedule == KlSchedule::sigmoid);
  CHECK(cfg.train.checkpoint_every == 25);
  CHECK(cfg.train.seed == 18446744073709551615ULL);
  CHECK(cfg.train.word_dropout_prob == 0.25);
  CHECK(cfg.train.gradient_clip_norm == 1.5);
  CHECK(cfg.model.multisample_weight == 0.5);
  CHECK(cfg.min_frequency == 2);
  CHECK_FALSE(cfg.lowercase);
  CHECK(cfg.model.multisample_ce_all);
  CHECK(cfg.model.final_state == FinalStateKind::cell);
  CHECK(cfg.model.inference_latent == InferenceLatent::mean);
  CHECK(run_config_keys().size() == 25);
}

TEST_CASE("defaults follow the published hyperparameters") {
  const auto cfg = parse_run_config("variant = vae-iterdec2\ntrain_pairs = p\n");
  CHECK(cfg.model.embedding_dim == 300);
  CHECK(cfg.model.hidden_units == 600);
  CHECK(cfg.model.latent_dim == 1100);
  CHECK(cfg.model.max_len == 15);
  CHECK(cfg.train.learning_rate == 5e-4);
  CHECK(cfg.train.batch_size == 32);
}

TEST_CASE("malformed configs raise named errors") {
  CHECK(message_of("train_pairs = p\n").find("variant") != std::string::npos);
  CHECK(message_of("variant = vae-s\n").find("train_pairs") != std::string::npos);
  CHECK(message_of("variant = vae-s\ntrain_pairs = a\ncaption_groups = b\n").find("exactly one") != std::string::npos);
  const auto unknown = message_of("variant = vae-s\ntrain_pairs = a\nhiden_units = 3\n");
  CHECK(unknown.find("hiden_units") != std::string::npos);
  CHECK(unknown.find("line 3") != std::string::npos);
  CHECK(message_of("variant = vae-s\ntrain_pairs = a\nseed = 1\nseed = 2\n").find("duplicate") != std::string::npos);
  CHECK(message_of("variant = vae-s\ntrain_pairs = a\nbatch_size = -1\n").find("batch_size") != std::string::npos);
  CHECK(message_of("variant = vae-s\ntrain_pairs = a\nlearning_rate = fast\n").find("learning_rate") !=
        std::string::npos);
  CHECK(message_of("variant = vae-s\ntrain_pairs = a\nlowercase = maybe\n").find("lowercase") != std::string::npos);
  CHECK(message_of("variant = vae-s\ntrain_pairs = a\nbatch_size = 0\n").find("batch_size") != std::string::npos);
  CHECK(message_of("variant = vae-s\njust text\n").find("key = value") != std::string::npos);
  CHECK_FALSE(message_of("variant = vae-s\ntrain_pairs = a\nfinal_state = top\n").empty());
}

TEST_CASE("config files resolve paths next to themselves") {
  const auto dir = fs::temp_directory_path() / "redecode_run_config";
  fs::remove_all(dir);
  fs::create_directories(dir);
  io::write_file_atomic(dir / "run.cfg", "variant = vae-s\r\ntrain_pairs = pairs.tsv\r\n");
  const auto cfg = load_run_config(dir / "run.cfg");
  CHECK(cfg.train_pairs == dir / "pairs.tsv");
  CHECK_THROWS_AS(load_run_config(dir / "missing.cfg"), DataError);
}

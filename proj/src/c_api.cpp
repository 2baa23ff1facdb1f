#include "redecode/redecode.h"

#include <charconv>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <new>
#include <string>

#include "fileio.hpp"
#include "redecode/checkpoint.hpp"
#include "redecode/error.hpp"
#include "redecode/pipeline.hpp"

struct rd_model {
  redecode::LoadedModel loaded;
};

struct rd_train_result {
  redecode::TrainSummary summary;
  std::string checkpoint;
};

namespace {

thread_local std::string last_error;

rd_status fail(rd_status status, const std::string& message) {
  last_error = message;
  return status;
}

// Maps the active exception onto a status code.
rd_status translate() {
  try {
    throw;
  } catch (const redecode::ConfigError& e) {
    return fail(RD_ERR_USAGE, e.what());
  } catch (const redecode::DataError& e) {
    return fail(RD_ERR_DATA, e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    return fail(RD_ERR_DATA, e.what());
  } catch (const std::bad_alloc&) {
    return fail(RD_ERR_MODEL, "out of memory");
  } catch (const std::exception& e) {
    return fail(RD_ERR_MODEL, e.what());
  } catch (...) {
    return fail(RD_ERR_MODEL, "unknown error");
  }
}

char* copy_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

template <typename F>
rd_status guarded(F&& body) {
  try {
    last_error.clear();
    body();
    return RD_OK;
  } catch (...) {
    return translate();
  }
}

}  // namespace

extern "C" {

const char* rd_version(void) { return "0.1.0"; }

const char* rd_last_error(void) { return last_error.c_str(); }

void rd_string_free(char* text) { std::free(text); }

rd_status rd_parse_seed(const char* text, uint64_t* seed) {
  if (!text || !seed) return fail(RD_ERR_USAGE, "rd_parse_seed: null argument");
  const std::size_t n = std::strlen(text);
  uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(text, text + n, v);
  if (n == 0 || ec != std::errc() || ptr != text + n) {
    return fail(RD_ERR_USAGE, std::string("invalid seed '") + text + "' (expected a non-negative integer)");
  }
  *seed = v;
  return RD_OK;
}

rd_status rd_train(const char* config_path, const char* out_dir, int has_seed, uint64_t seed,
                   rd_train_result** result) {
  if (!config_path || !out_dir) return fail(RD_ERR_USAGE, "rd_train: config path and output directory are required");
  if (result) *result = nullptr;
  return guarded([&] {
    const auto config = redecode::load_run_config(config_path);
    auto summary = redecode::run_train(config, out_dir,
                                       has_seed ? std::optional<std::uint64_t>(seed) : std::nullopt);
    if (result) {
      auto* r = new rd_train_result{std::move(summary), {}};
      r->checkpoint = r->summary.checkpoint.string();
      *result = r;
    }
  });
}

uint64_t rd_train_result_steps(const rd_train_result* r) { return r ? r->summary.steps : 0; }
size_t rd_train_result_num_decoders(const rd_train_result* r) { return r ? r->summary.final_ce.size() : 0; }
double rd_train_result_ce(const rd_train_result* r, size_t decoder) {
  return r && decoder < r->summary.final_ce.size() ? r->summary.final_ce[decoder] : 0.0;
}
double rd_train_result_kl(const rd_train_result* r) { return r ? r->summary.final_kl : 0.0; }
size_t rd_train_result_pairs(const rd_train_result* r) { return r ? r->summary.training_pairs : 0; }
size_t rd_train_result_vocab_size(const rd_train_result* r) { return r ? r->summary.vocab_size : 0; }
const char* rd_train_result_checkpoint(const rd_train_result* r) { return r ? r->checkpoint.c_str() : ""; }
void rd_train_result_free(rd_train_result* r) { delete r; }

rd_status rd_model_load(const char* checkpoint_path, rd_model** model) {
  if (!checkpoint_path || !model) return fail(RD_ERR_USAGE, "rd_model_load: null argument");
  *model = nullptr;
  return guarded([&] {
    if (!std::filesystem::exists(checkpoint_path)) {
      throw redecode::DataError(std::string("checkpoint not found: ") + checkpoint_path);
    }
    *model = new rd_model{redecode::load_model(checkpoint_path)};
  });
}

void rd_model_free(rd_model* model) { delete model; }

size_t rd_model_num_decoders(const rd_model* model) { return model ? model->loaded.model.decoders.size() : 0; }
size_t rd_model_vocab_size(const rd_model* model) { return model ? model->loaded.vocab.size() : 0; }
uint64_t rd_model_train_seed(const rd_model* model) { return model ? model->loaded.train.seed : 0; }

rd_status rd_generate_file(const rd_model* model, const char* input_path, uint64_t seed, char** output) {
  if (!model || !input_path || !output) return fail(RD_ERR_USAGE, "rd_generate_file: null argument");
  *output = nullptr;
  return guarded([&] {
    const auto lines = redecode::io::read_lines(input_path);
    *output = copy_string(redecode::run_generate(model->loaded, lines, seed));
  });
}

rd_status rd_generate(const rd_model* model, const char* const* sentences, size_t count, uint64_t seed,
                      char** output) {
  if (!model || !output || (count > 0 && !sentences)) return fail(RD_ERR_USAGE, "rd_generate: null argument");
  *output = nullptr;
  return guarded([&] {
    std::vector<std::string> lines;
    for (size_t i = 0; i < count; ++i) lines.emplace_back(sentences[i] ? sentences[i] : "");
    *output = copy_string(redecode::run_generate(model->loaded, lines, seed));
  });
}

rd_status rd_eval(const rd_model* model, const char* pairs_path, const char* out_dir, uint64_t seed, char** table) {
  if (!model || !pairs_path || !out_dir) return fail(RD_ERR_USAGE, "rd_eval: null argument");
  if (table) *table = nullptr;
  return guarded([&] {
    const auto result = redecode::run_eval(model->loaded, pairs_path, out_dir, seed);
    if (table) *table = copy_string(redecode::format_report_table(result.reports));
  });
}

rd_status rd_attn_dump(const rd_model* model, const char* sentence, const char* out_dir, uint64_t seed) {
  if (!model || !sentence || !out_dir) return fail(RD_ERR_USAGE, "rd_attn_dump: null argument");
  return guarded([&] { redecode::run_attn_dump(model->loaded, sentence, out_dir, seed); });
}

}  // extern "C"

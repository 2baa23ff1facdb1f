// redecode command-line tool. Links only the C interface.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <string>

#include "CLI11.hpp"
#include "redecode/redecode.h"

namespace {

int report(rd_status status) {
  if (status != RD_OK) std::fprintf(stderr, "error: %s\n", rd_last_error());
  return static_cast<int>(status);
}

// REDECODE_SEED, when set, takes precedence over config and flags.
rd_status env_seed(bool& present, uint64_t& seed) {
  const char* text = std::getenv("REDECODE_SEED");
  present = text != nullptr && *text != '\0';
  return present ? rd_parse_seed(text, &seed) : RD_OK;
}

struct ModelHandle {
  rd_model* ptr = nullptr;
  ~ModelHandle() { rd_model_free(ptr); }
};

int cmd_train(const std::string& config, const std::string& out) {
  bool has_seed = false;
  uint64_t seed = 0;
  if (rd_status s = env_seed(has_seed, seed); s != RD_OK) return report(s);
  rd_train_result* result = nullptr;
  const rd_status s = rd_train(config.c_str(), out.c_str(), has_seed ? 1 : 0, seed, &result);
  if (s != RD_OK) return report(s);
  std::printf("steps\t%llu\n", static_cast<unsigned long long>(rd_train_result_steps(result)));
  for (size_t i = 0; i < rd_train_result_num_decoders(result); ++i) {
    std::printf("ce_decoder%zu\t%.6f\n", i + 1, rd_train_result_ce(result, i));
  }
  std::printf("kl\t%.6f\n", rd_train_result_kl(result));
  std::printf("checkpoint\t%s\n", rd_train_result_checkpoint(result));
  rd_train_result_free(result);
  return 0;
}

int cmd_generate(const std::string& ckpt, const std::string& input, bool seed_given, uint64_t seed) {
  bool env = false;
  uint64_t env_value = 0;
  if (rd_status s = env_seed(env, env_value); s != RD_OK) return report(s);
  if (env) seed = env_value;
  ModelHandle model;
  if (rd_status s = rd_model_load(ckpt.c_str(), &model.ptr); s != RD_OK) return report(s);
  if (!env && !seed_given) seed = rd_model_train_seed(model.ptr);
  char* text = nullptr;
  if (rd_status s = rd_generate_file(model.ptr, input.c_str(), seed, &text); s != RD_OK) return report(s);
  std::fputs(text, stdout);
  rd_string_free(text);
  return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& pairs, const std::string& out) {
  bool env = false;
  uint64_t seed = 0;
  if (rd_status s = env_seed(env, seed); s != RD_OK) return report(s);
  ModelHandle model;
  if (rd_status s = rd_model_load(ckpt.c_str(), &model.ptr); s != RD_OK) return report(s);
  if (!env) seed = rd_model_train_seed(model.ptr);
  char* table = nullptr;
  if (rd_status s = rd_eval(model.ptr, pairs.c_str(), out.c_str(), seed, &table); s != RD_OK) return report(s);
  std::fputs(table, stdout);
  rd_string_free(table);
  return 0;
}

int cmd_attn_dump(const std::string& ckpt, const std::string& sentence, const std::string& out) {
  bool env = false;
  uint64_t seed = 0;
  if (rd_status s = env_seed(env, seed); s != RD_OK) return report(s);
  ModelHandle model;
  if (rd_status s = rd_model_load(ckpt.c_str(), &model.ptr); s != RD_OK) return report(s);
  if (!env) seed = rd_model_train_seed(model.ptr);
  if (rd_status s = rd_attn_dump(model.ptr, sentence.c_str(), out.c_str(), seed); s != RD_OK) return report(s);
  for (size_t i = 0; i < rd_model_num_decoders(model.ptr); ++i) {
    std::printf("%s\n", (std::filesystem::path(out) / ("decoder" + std::to_string(i + 1) + ".csv")).c_str());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Iterative-refinement paraphrase generation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", rd_version());

  std::string config, out, ckpt, input, pairs, sentence;
  uint64_t seed = 0;

  auto* train = app.add_subcommand("train", "Train a model from a key=value config file");
  train->add_option("--config", config, "Run configuration")->required();
  train->add_option("--out", out, "Output directory")->required();

  auto* generate = app.add_subcommand("generate", "Paraphrase each line of a text file");
  generate->add_option("--ckpt", ckpt, "Checkpoint file")->required();
  generate->add_option("--input", input, "One sentence per line")->required();
  auto* seed_opt = generate->add_option("--seed", seed, "Sampling seed (default: training seed)");

  auto* eval = app.add_subcommand("eval", "Score generated paraphrases against references");
  eval->add_option("--ckpt", ckpt, "Checkpoint file")->required();
  eval->add_option("--pairs", pairs, "Tab-separated sentence pairs")->required();
  eval->add_option("--out", out, "Output directory")->required();

  auto* attn = app.add_subcommand("attn-dump", "Write per-decoder attention matrices as CSV");
  attn->add_option("--ckpt", ckpt, "Checkpoint file")->required();
  attn->add_option("--sentence", sentence, "Input sentence")->required();
  attn->add_option("--out", out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(RD_ERR_USAGE);
  }

  if (train->parsed()) return cmd_train(config, out);
  if (generate->parsed()) return cmd_generate(ckpt, input, seed_opt->count() > 0, seed);
  if (eval->parsed()) return cmd_eval(ckpt, pairs, out);
  return cmd_attn_dump(ckpt, sentence, out);
}

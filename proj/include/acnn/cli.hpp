#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "acnn/data.hpp"
#include "acnn/train.hpp"

namespace acnn {

// Everything a `train` run depends on. Absent JSON keys take the defaults below, which follow
// the full CIFAR-10 protocol; the effective config is written next to the run outputs.
struct RunConfig {
  std::string arch = "all-cnn-c";
  double scale = 1.0;
  std::size_t classes = 10;
  std::string dataset = "cifar10";  // or "cifar100"
  std::filesystem::path data_dir = "data/cifar-10-batches-bin";
  std::filesystem::path out_dir = "runs/all-cnn-c";
  std::uint64_t seed = 1;
  std::size_t n_train = 0;  // 0 keeps the whole split
  std::size_t n_test = 0;
  double input_dropout = 0.2;
  double hidden_dropout = 0.5;
  PreprocConfig preprocess;
  TrainConfig train;

  // Builds the model and checks every hyperparameter; throws BadConfig or the model errors.
  void validate() const;
};

// Throws BadConfig on malformed JSON, unknown keys or wrongly typed values.
RunConfig parse_run_config(std::string_view json_text);
std::string dump_run_config(const RunConfig& config);

// Fresh model for the config: architecture, dropout rates and seeded initialization.
Model make_model(const RunConfig& config);

// Directory containing the CIFAR-10 binary batches: $ACNK_CIFAR10_DIR if set, else `fallback`.
std::filesystem::path cifar10_dir(const std::filesystem::path& fallback);

// Entry point behind the acnn executable. Exit status: 0 success, 1 usage error, 2 runtime
// error. Diagnostics go to `err`; short results (counts, error rates) to `out`.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace acnn

#pragma once

// Command implementations behind the noisyglm executable. Each command reads
// its inputs, writes CSV artifacts plus one manifest.json into `out_dir`, and
// returns the process exit code.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "noisyglm/types.hpp"

namespace noisyglm::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInput = 2;
inline constexpr int kExitMaxIter = 3;

inline constexpr const char* kSchema = "noisyglm/1";
inline constexpr const char* kInterceptName = "(intercept)";
inline constexpr std::uint64_t kDefaultSeed = 20240611;

// Bad user input; maps to exit code 2.
class InputError : public Error {
 public:
  using Error::Error;
};

struct NoiseFlags {
  std::optional<double> rho0;
  std::optional<double> rho1;
  std::optional<double> pu_pi;
  std::optional<double> pu_nl;
  std::optional<double> pu_nu;
};

struct FitOptions {
  std::string data;
  std::string label = "z";
  std::vector<std::string> features;  // empty: every non-label column
  bool intercept = true;
  NoiseFlags noise;
  std::string loss = "sur";
  std::optional<double> lambda;
  bool cv = false;
  int folds = 5;
  std::optional<double> radius;
  std::vector<std::string> unpenalized;
  std::uint64_t seed = kDefaultSeed;
  int max_iter = 10000;
  std::string out_dir;
};

struct InferOptions {
  std::string fit_dir;
  double alpha = 0.05;
  std::string out_dir;  // empty: <fit_dir>/inference
};

struct GapOptions {
  std::string design;
  std::string beta;  // name,estimate CSV; names select design columns
  NoiseFlags noise;
  std::string out_dir;
};

struct StudyOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> replications;
  std::optional<int> threads;
  std::string out_dir;
};

int cmd_fit(const FitOptions& opt);
int cmd_infer(const InferOptions& opt);
int cmd_gap(const GapOptions& opt);
int cmd_study(const StudyOptions& opt);

/// Hex SHA-256 of a file's bytes.
std::string sha256_file(const std::string& path);

}  // namespace noisyglm::cli

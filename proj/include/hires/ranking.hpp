#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace hires {

/// wins[a][b] = number of times method a was preferred over method b.
struct VoteMatrix {
  std::vector<std::string> names;
  std::vector<std::vector<double>> wins;

  [[nodiscard]] int size() const { return static_cast<int>(names.size()); }
  void validate() const;
};

struct ScoreVector {
  std::vector<std::string> names;
  std::vector<double> worth;  // normalized so the geometric mean is 1
  std::vector<double> score;  // ln(worth) - min ln(worth)
  int iterations = 0;

  /// Estimated P(a preferred over b).
  [[nodiscard]] double probability(int a, int b) const { return worth[a] / (worth[a] + worth[b]); }
};

struct BradleyTerryOptions {
  int max_iter = 10000;
  double tol = 1e-10;
  /// Adds this many pseudo-votes in each direction of every compared pair.
  /// Zero disables smoothing, in which case a method without wins is an error.
  double smoothing = 0.0;
};

/// Maximum-likelihood Bradley-Terry worths by minorization-maximization.
ScoreVector bradley_terry(const VoteMatrix& votes, const BradleyTerryOptions& opts = {});

/// Parses `winner,loser[,count]` lines. Blank lines and lines starting with
/// '#' are ignored, as is a leading `winner,loser` header.
VoteMatrix parse_votes(const std::string& text);
VoteMatrix load_votes(const std::filesystem::path& path);

std::string format_scores(const ScoreVector& s);

}  // namespace hires

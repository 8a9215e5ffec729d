#include "hires/ranking.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>

#include "hires/errors.hpp"

namespace hires {

void VoteMatrix::validate() const {
  const auto n = names.size();
  if (wins.size() != n) throw RankingError("vote matrix: row count does not match method count");
  for (std::size_t i = 0; i < n; ++i) {
    if (wins[i].size() != n) throw RankingError("vote matrix: row " + names[i] + " has the wrong length");
    for (std::size_t j = 0; j < n; ++j) {
      if (!(wins[i][j] >= 0.0) || !std::isfinite(wins[i][j])) {
        throw RankingError("vote matrix: negative or non-finite count for " + names[i] + " over " + names[j]);
      }
    }
    if (wins[i][i] != 0.0) throw RankingError("vote matrix: self comparison for " + names[i]);
  }
}

namespace {

std::vector<std::vector<int>> components(const std::vector<std::vector<double>>& total) {
  const int n = static_cast<int>(total.size());
  std::vector<int> label(n, -1);
  std::vector<std::vector<int>> out;
  for (int s = 0; s < n; ++s) {
    if (label[s] >= 0) continue;
    const int id = static_cast<int>(out.size());
    out.emplace_back();
    std::vector<int> stack{s};
    label[s] = id;
    while (!stack.empty()) {
      const int u = stack.back();
      stack.pop_back();
      out[id].push_back(u);
      for (int v = 0; v < n; ++v) {
        if (label[v] < 0 && total[u][v] > 0.0) {
          label[v] = id;
          stack.push_back(v);
        }
      }
    }
    std::sort(out[id].begin(), out[id].end());
  }
  return out;
}

}  // namespace

ScoreVector bradley_terry(const VoteMatrix& votes, const BradleyTerryOptions& opts) {
  votes.validate();
  const int n = votes.size();
  if (n < 2) throw RankingError("need at least two methods to rank");
  if (opts.smoothing < 0.0 || opts.max_iter < 1 || !(opts.tol > 0.0)) {
    throw RankingError("invalid Bradley-Terry options");
  }

  std::vector<std::vector<double>> w = votes.wins;
  std::vector<std::vector<double>> total(n, std::vector<double>(n, 0.0));
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) total[i][j] = votes.wins[i][j] + votes.wins[j][i];
  }
  if (opts.smoothing > 0.0) {
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        if (i != j && total[i][j] > 0.0) w[i][j] += opts.smoothing;
      }
    }
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) total[i][j] = w[i][j] + w[j][i];
    }
  }

  const auto comps = components(total);
  if (comps.size() > 1) {
    std::string msg = "comparison graph is disconnected:";
    for (std::size_t c = 0; c < comps.size(); ++c) {
      msg += c == 0 ? " {" : " | {";
      for (std::size_t k = 0; k < comps[c].size(); ++k) msg += (k ? "," : "") + votes.names[comps[c][k]];
      msg += "}";
    }
    throw RankingError(msg);
  }

  std::vector<double> won(n, 0.0);
  for (int i = 0; i < n; ++i) won[i] = std::accumulate(w[i].begin(), w[i].end(), 0.0);
  for (int i = 0; i < n; ++i) {
    if (won[i] == 0.0) throw RankingError("method " + votes.names[i] + " has no wins; enable smoothing");
  }

  std::vector<double> p(n, 1.0);
  std::vector<double> next(n);
  int iter = 0;
  bool converged = false;
  while (iter < opts.max_iter) {
    ++iter;
    for (int i = 0; i < n; ++i) {
      double denom = 0.0;
      for (int j = 0; j < n; ++j) {
        if (j != i && total[i][j] > 0.0) denom += total[i][j] / (p[i] + p[j]);
      }
      next[i] = won[i] / denom;
    }
    double log_mean = 0.0;
    for (double v : next) log_mean += std::log(v);
    log_mean /= n;
    const double scale = std::exp(-log_mean);
    double change = 0.0;
    for (int i = 0; i < n; ++i) {
      next[i] *= scale;
      change = std::max(change, std::abs(next[i] - p[i]) / p[i]);
    }
    p.swap(next);
    if (change < opts.tol) {
      converged = true;
      break;
    }
  }
  if (!converged) {
    throw RankingError("Bradley-Terry iteration did not converge in " + std::to_string(opts.max_iter) +
                       " iterations");
  }

  ScoreVector out;
  out.names = votes.names;
  out.worth = p;
  out.iterations = iter;
  double min_log = std::log(p[0]);
  for (double v : p) min_log = std::min(min_log, std::log(v));
  for (double v : p) out.score.push_back(std::log(v) - min_log);
  return out;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

VoteMatrix parse_votes(const std::string& text) {
  std::map<std::string, int> index;
  VoteMatrix m;
  auto id = [&](const std::string& name) {
    const auto it = index.find(name);
    if (it != index.end()) return it->second;
    const int k = static_cast<int>(m.names.size());
    index.emplace(name, k);
    m.names.push_back(name);
    for (auto& row : m.wins) row.push_back(0.0);
    m.wins.emplace_back(m.names.size(), 0.0);
    return k;
  };

  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  bool first = true;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(trim(f));
    if (first && fields.size() >= 2 && fields[0] == "winner" && fields[1] == "loser") {
      first = false;
      continue;
    }
    first = false;
    if (fields.size() < 2 || fields.size() > 3 || fields[0].empty() || fields[1].empty()) {
      throw RankingError("votes line " + std::to_string(line_no) + ": expected winner,loser[,count]");
    }
    if (fields[0] == fields[1]) {
      throw RankingError("votes line " + std::to_string(line_no) + ": winner equals loser");
    }
    double count = 1.0;
    if (fields.size() == 3) {
      try {
        std::size_t used = 0;
        count = std::stod(fields[2], &used);
        if (used != fields[2].size()) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        throw RankingError("votes line " + std::to_string(line_no) + ": bad count '" + fields[2] + "'");
      }
      if (!(count >= 0.0) || !std::isfinite(count)) {
        throw RankingError("votes line " + std::to_string(line_no) + ": count must be non-negative");
      }
    }
    const int a = id(fields[0]);
    const int b = id(fields[1]);
    m.wins[a][b] += count;
  }
  return m;
}

VoteMatrix load_votes(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open votes file " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_votes(ss.str());
}

std::string format_scores(const ScoreVector& s) {
  std::vector<int> order(s.names.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return s.score[a] > s.score[b]; });
  std::size_t w = 6;
  for (const auto& n : s.names) w = std::max(w, n.size());
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(w)) << "method" << "  " << std::right << std::setw(10) << "score"
     << "  " << std::setw(10) << "worth" << '\n';
  os << std::fixed << std::setprecision(4);
  for (int i : order) {
    os << std::left << std::setw(static_cast<int>(w)) << s.names[i] << "  " << std::right << std::setw(10)
       << s.score[i] << "  " << std::setw(10) << s.worth[i] << '\n';
  }
  return os.str();
}

}  // namespace hires

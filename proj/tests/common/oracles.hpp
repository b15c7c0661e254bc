#pragma once

// Independent reference implementations used by unit and acceptance tests.

#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include <Eigen/Core>

namespace keyflow::oracle {

struct PathScore {
  double sum = std::numeric_limits<double>::infinity();
  int length = 0;
  double normalized() const { return sum / length; }
};

// Exhaustive enumeration of every monotone warping path from (0,0) to (n-1,m-1).
inline PathScore dtw_bruteforce(int n, int m, const std::function<double(int, int)>& cost) {
  PathScore best;
  std::function<void(int, int, double, int)> walk = [&](int i, int j, double sum, int len) {
    sum += cost(i, j);
    ++len;
    if (i == n - 1 && j == m - 1) {
      if (sum < best.sum) best = {sum, len};
      return;
    }
    if (i + 1 < n) walk(i + 1, j, sum, len);
    if (j + 1 < m) walk(i, j + 1, sum, len);
    if (i + 1 < n && j + 1 < m) walk(i + 1, j + 1, sum, len);
  };
  walk(0, 0, 0.0, 0);
  return best;
}

// -ln p(target) for the {blank=0, SIGN=1} alphabet and target SIGN x target_len, by summing
// the probability of every length-T frame labeling whose CTC collapse equals the target.
inline double ctc_bruteforce(const Eigen::MatrixXd& logits, int target_len) {
  const int t_len = static_cast<int>(logits.rows());
  std::vector<Eigen::Vector2d> probs(t_len);
  for (int t = 0; t < t_len; ++t) {
    const Eigen::Vector2d e = (logits.row(t).transpose().array() - logits.row(t).maxCoeff()).exp();
    probs[t] = e / e.sum();
  }
  double total = 0.0;
  for (int bits = 0; bits < (1 << t_len); ++bits) {
    int tokens = 0;
    int prev = 0;
    double p = 1.0;
    for (int t = 0; t < t_len; ++t) {
      const int s = (bits >> t) & 1;
      p *= probs[t][s];
      if (s == 1 && prev == 0) ++tokens;
      prev = s;
    }
    if (tokens == target_len) total += p;
  }
  return -std::log(total);
}

}  // namespace keyflow::oracle

#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace bsnet {

// Six-region severity score. Regions live on a 3x2 grid: column 0 holds
// A, B, C top to bottom, column 1 holds D, E, F. v[] is indexed by region
// letter, so v = {A, B, C, D, E, F}.
struct BrixiaScore {
  std::array<int, 6> v{};

  int& operator[](int i) { return v[static_cast<size_t>(i)]; }
  int operator[](int i) const { return v[static_cast<size_t>(i)]; }

  int& at(int row, int col) { return v[static_cast<size_t>(col * 3 + row)]; }
  int at(int row, int col) const { return v[static_cast<size_t>(col * 3 + row)]; }

  bool valid() const {
    for (int x : v)
      if (x < 0 || x > 3) return false;
    return true;
  }

  bool operator==(const BrixiaScore& o) const { return v == o.v; }
};

constexpr const char* kRegionNames = "ABCDEF";

struct RaterEntry {
  std::string rater;
  int seniority = 0;  // 1 = most senior
  BrixiaScore score;
};
using RaterPanel = std::vector<RaterEntry>;

struct LoRegression {
  double coef = 0.0;
  double intercept = 0.0;
};

int global_score(const BrixiaScore& s);

struct TScore {
  std::array<int, 6> indicator{};
  int global = 0;  // in [0,6]
};
TScore to_t_score(const BrixiaScore& s);

// Least-squares line through (global score, LO) pairs.
LoRegression fit_lo(const std::vector<std::pair<double, double>>& pairs);
double apply_lo(int g, const LoRegression& r);

// Per region independently: the most-voted value; ties go to the value voted
// by the most senior rater among the tied values.
BrixiaScore consensus(const RaterPanel& panel);

// Standard kappas over integer categories >= 0. Degenerate marginals
// (expected agreement 1) yield an empty optional.
std::optional<double> cohen_kappa(const std::vector<int>& r1, const std::vector<int>& r2);
std::optional<double> fleiss_kappa(const std::vector<std::vector<int>>& items);

// Swaps score columns (A<->D, B<->E, C<->F); involution.
BrixiaScore flip_score(const BrixiaScore& s);

// Rater CSV: header id,rater,seniority,A,B,C,D,E,F; one row per (image, rater).
std::map<std::string, RaterPanel> load_rater_csv(const std::string& path);
void save_rater_csv(const std::string& path, const std::map<std::string, RaterPanel>& panels);

}  // namespace bsnet

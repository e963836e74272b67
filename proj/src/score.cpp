#include "bsnet/score.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "bsnet/tensor.hpp"

namespace bsnet {

int global_score(const BrixiaScore& s) {
  contract(s.valid(), "global_score: region values must be in 0..3");
  int g = 0;
  for (int x : s.v) g += x;
  return g;
}

TScore to_t_score(const BrixiaScore& s) {
  contract(s.valid(), "to_t_score: region values must be in 0..3");
  TScore t;
  for (int i = 0; i < 6; ++i) {
    t.indicator[static_cast<size_t>(i)] = s[i] > 0 ? 1 : 0;
    t.global += t.indicator[static_cast<size_t>(i)];
  }
  return t;
}

LoRegression fit_lo(const std::vector<std::pair<double, double>>& pairs) {
  contract(pairs.size() >= 2, "fit_lo: need at least 2 pairs");
  double sx = 0, sy = 0;
  for (const auto& [x, y] : pairs) {
    sx += x;
    sy += y;
  }
  const double n = static_cast<double>(pairs.size());
  const double mx = sx / n, my = sy / n;
  double sxx = 0, sxy = 0;
  for (const auto& [x, y] : pairs) {
    sxx += (x - mx) * (x - mx);
    sxy += (x - mx) * (y - my);
  }
  contract(sxx > 0.0, "fit_lo: zero-variance global scores, line is undefined");
  LoRegression r;
  r.coef = sxy / sxx;
  r.intercept = my - r.coef * mx;
  return r;
}

double apply_lo(int g, const LoRegression& r) { return r.coef * g + r.intercept; }

BrixiaScore consensus(const RaterPanel& panel) {
  contract(!panel.empty(), "consensus: empty panel");
  {
    std::set<std::string> ids;
    std::set<int> ranks;
    for (const auto& e : panel) {
      contract(e.score.valid(), "consensus: rater " + e.rater + " has out-of-range values");
      contract(ids.insert(e.rater).second, "consensus: duplicate rater id " + e.rater);
      contract(ranks.insert(e.seniority).second, "consensus: duplicate seniority rank");
    }
  }
  BrixiaScore out;
  for (int r = 0; r < 6; ++r) {
    int votes[4] = {0, 0, 0, 0};
    for (const auto& e : panel) ++votes[e.score[r]];
    const int top = *std::max_element(votes, votes + 4);
    int best_rank = 0, best_value = -1;
    for (const auto& e : panel) {
      const int v = e.score[r];
      if (votes[v] != top) continue;
      if (best_value < 0 || e.seniority < best_rank) {
        best_rank = e.seniority;
        best_value = v;
      }
    }
    out[r] = best_value;
  }
  return out;
}

namespace {

int category_count(const std::vector<int>& vals) {
  int mx = 0;
  for (int v : vals) {
    contract(v >= 0, "kappa: categories must be non-negative");
    mx = std::max(mx, v);
  }
  return mx + 1;
}

}  // namespace

std::optional<double> cohen_kappa(const std::vector<int>& r1, const std::vector<int>& r2) {
  contract(r1.size() == r2.size(), "cohen_kappa: length mismatch");
  contract(!r1.empty(), "cohen_kappa: empty input");
  std::vector<int> all(r1);
  all.insert(all.end(), r2.begin(), r2.end());
  const int K = category_count(all);
  const double n = static_cast<double>(r1.size());
  std::vector<double> p1(static_cast<size_t>(K), 0.0), p2(static_cast<size_t>(K), 0.0);
  double po = 0.0;
  for (size_t i = 0; i < r1.size(); ++i) {
    p1[static_cast<size_t>(r1[i])] += 1.0;
    p2[static_cast<size_t>(r2[i])] += 1.0;
    if (r1[i] == r2[i]) po += 1.0;
  }
  po /= n;
  double pe = 0.0;
  for (int k = 0; k < K; ++k) pe += (p1[static_cast<size_t>(k)] / n) * (p2[static_cast<size_t>(k)] / n);
  if (std::abs(1.0 - pe) < 1e-12) return std::nullopt;
  return (po - pe) / (1.0 - pe);
}

std::optional<double> fleiss_kappa(const std::vector<std::vector<int>>& items) {
  contract(!items.empty(), "fleiss_kappa: empty input");
  const size_t r = items[0].size();
  contract(r >= 2, "fleiss_kappa: need at least 2 raters");
  std::vector<int> all;
  for (const auto& it : items) {
    contract(it.size() == r, "fleiss_kappa: ragged rater counts");
    all.insert(all.end(), it.begin(), it.end());
  }
  const int K = category_count(all);
  const double N = static_cast<double>(items.size());
  const double R = static_cast<double>(r);
  std::vector<double> pcat(static_cast<size_t>(K), 0.0);
  double pbar = 0.0;
  for (const auto& it : items) {
    std::vector<int> cnt(static_cast<size_t>(K), 0);
    for (int v : it) ++cnt[static_cast<size_t>(v)];
    double s = 0.0;
    for (int k = 0; k < K; ++k) {
      s += static_cast<double>(cnt[static_cast<size_t>(k)]) * cnt[static_cast<size_t>(k)];
      pcat[static_cast<size_t>(k)] += cnt[static_cast<size_t>(k)];
    }
    pbar += (s - R) / (R * (R - 1.0));
  }
  pbar /= N;
  double pe = 0.0;
  for (int k = 0; k < K; ++k) {
    const double p = pcat[static_cast<size_t>(k)] / (N * R);
    pe += p * p;
  }
  if (std::abs(1.0 - pe) < 1e-12) return std::nullopt;
  return (pbar - pe) / (1.0 - pe);
}

BrixiaScore flip_score(const BrixiaScore& s) {
  BrixiaScore out;
  for (int i = 0; i < 3; ++i) {
    out.v[static_cast<size_t>(i)] = s.v[static_cast<size_t>(i + 3)];
    out.v[static_cast<size_t>(i + 3)] = s.v[static_cast<size_t>(i)];
  }
  return out;
}

std::map<std::string, RaterPanel> load_rater_csv(const std::string& path) {
  std::ifstream f(path);
  contract(f.good(), "load_rater_csv: cannot open " + path);
  std::string line;
  contract(static_cast<bool>(std::getline(f, line)), "load_rater_csv: empty file " + path);
  std::map<std::string, RaterPanel> out;
  size_t lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    contract(fields.size() == 9,
             "load_rater_csv: line " + std::to_string(lineno) + " has " +
                 std::to_string(fields.size()) + " fields, expected 9");
    RaterEntry e;
    e.rater = fields[1];
    e.seniority = std::stoi(fields[2]);
    for (int i = 0; i < 6; ++i) e.score[i] = std::stoi(fields[static_cast<size_t>(3 + i)]);
    contract(e.score.valid(),
             "load_rater_csv: line " + std::to_string(lineno) + " has values outside 0..3");
    out[fields[0]].push_back(e);
  }
  return out;
}

void save_rater_csv(const std::string& path, const std::map<std::string, RaterPanel>& panels) {
  std::ofstream f(path);
  contract(f.good(), "save_rater_csv: cannot open " + path);
  f << "id,rater,seniority,A,B,C,D,E,F\n";
  for (const auto& [id, panel] : panels) {
    for (const auto& e : panel) {
      f << id << "," << e.rater << "," << e.seniority;
      for (int i = 0; i < 6; ++i) f << "," << e.score[i];
      f << "\n";
    }
  }
}

}  // namespace bsnet

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sslprop/error.hpp"
#include "sslprop/volume.hpp"

namespace sslprop {

/// 2|A n B| / (|A| + |B|); two empty masks score 1.
inline double dice(const BinaryMask& a, const BinaryMask& b) {
  require_same_shape(a, b, "dice");
  std::size_t na = 0, nb = 0, both = 0;
  const auto da = a.data();
  const auto db = b.data();
  for (std::size_t i = 0; i < da.size(); ++i) {
    na += da[i];
    nb += db[i];
    both += da[i] & db[i];
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

using VoxelIndex = std::array<std::size_t, 3>;  // (z, y, x)

/// Foreground voxels with at least one background 6-neighbour; positions
/// outside the volume count as background.
inline std::vector<VoxelIndex> boundary_voxels(const BinaryMask& m) {
  const auto& s = m.shape();
  std::vector<VoxelIndex> out;
  for (std::size_t z = 0; z < s.depth; ++z) {
    for (std::size_t y = 0; y < s.rows; ++y) {
      for (std::size_t x = 0; x < s.cols; ++x) {
        if (!m.at(z, y, x)) continue;
        const bool edge = z == 0 || y == 0 || x == 0 || z + 1 == s.depth || y + 1 == s.rows || x + 1 == s.cols;
        if (edge || !m.at(z - 1, y, x) || !m.at(z + 1, y, x) || !m.at(z, y - 1, x) || !m.at(z, y + 1, x) ||
            !m.at(z, y, x - 1) || !m.at(z, y, x + 1)) {
          out.push_back({z, y, x});
        }
      }
    }
  }
  return out;
}

enum class HausdorffMethod { Auto, BruteForce, DistanceTransform };

namespace detail {

inline double squared_mm(const VoxelIndex& p, const VoxelIndex& q, const Spacing& sp) {
  const double dz = (static_cast<double>(p[0]) - static_cast<double>(q[0])) * sp.z;
  const double dy = (static_cast<double>(p[1]) - static_cast<double>(q[1])) * sp.y;
  const double dx = (static_cast<double>(p[2]) - static_cast<double>(q[2])) * sp.x;
  return dz * dz + dy * dy + dx * dx;
}

inline double directed_brute_force(const std::vector<VoxelIndex>& from, const std::vector<VoxelIndex>& to,
                                   const Spacing& sp) {
  double worst = 0.0;
  for (const auto& p : from) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& q : to) best = std::min(best, squared_mm(p, q, sp));
    worst = std::max(worst, best);
  }
  return std::sqrt(worst);
}

// Lower envelope of parabolas w2 (q - p)^2 + f(p) along one line
// (Felzenszwalb & Huttenlocher). Infinite samples contribute nothing.
inline void envelope_1d(std::vector<double>& line, double w2, std::vector<std::size_t>& v,
                        std::vector<double>& z) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  const std::size_t n = line.size();
  v.resize(n);
  z.resize(n + 1);
  std::ptrdiff_t k = -1;
  auto cross = [&](std::size_t p, std::size_t q) {
    const double fp = line[p] + w2 * static_cast<double>(p) * static_cast<double>(p);
    const double fq = line[q] + w2 * static_cast<double>(q) * static_cast<double>(q);
    return (fq - fp) / (2.0 * w2 * (static_cast<double>(q) - static_cast<double>(p)));
  };
  for (std::size_t q = 0; q < n; ++q) {
    if (line[q] == inf) continue;
    double s = -inf;
    while (k >= 0) {
      s = cross(v[static_cast<std::size_t>(k)], q);
      if (s <= z[static_cast<std::size_t>(k)]) {
        --k;
      } else {
        break;
      }
    }
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -inf;
    } else {
      ++k;
      v[static_cast<std::size_t>(k)] = q;
      z[static_cast<std::size_t>(k)] = s;
    }
    z[static_cast<std::size_t>(k) + 1] = inf;
  }
  if (k < 0) return;  // all infinite: line unchanged
  std::vector<double> out(n);
  std::size_t j = 0;
  for (std::size_t q = 0; q < n; ++q) {
    while (z[j + 1] < static_cast<double>(q)) ++j;
    const double d = static_cast<double>(q) - static_cast<double>(v[j]);
    out[q] = w2 * d * d + line[v[j]];
  }
  line.swap(out);
}

/// Squared millimetre distance from every voxel to the nearest seed voxel.
inline std::vector<double> squared_distance_field(const Shape& s, const Spacing& sp,
                                                  const std::vector<VoxelIndex>& seeds) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> field(s.voxels(), inf);
  auto at = [&](std::size_t z, std::size_t y, std::size_t x) -> double& {
    return field[(z * s.rows + y) * s.cols + x];
  };
  for (const auto& p : seeds) at(p[0], p[1], p[2]) = 0.0;
  std::vector<double> line;
  std::vector<std::size_t> v;
  std::vector<double> zbuf;
  // x lines
  line.resize(s.cols);
  for (std::size_t z = 0; z < s.depth; ++z)
    for (std::size_t y = 0; y < s.rows; ++y) {
      for (std::size_t x = 0; x < s.cols; ++x) line[x] = at(z, y, x);
      envelope_1d(line, sp.x * sp.x, v, zbuf);
      for (std::size_t x = 0; x < s.cols; ++x) at(z, y, x) = line[x];
    }
  // y lines
  line.resize(s.rows);
  for (std::size_t z = 0; z < s.depth; ++z)
    for (std::size_t x = 0; x < s.cols; ++x) {
      for (std::size_t y = 0; y < s.rows; ++y) line[y] = at(z, y, x);
      envelope_1d(line, sp.y * sp.y, v, zbuf);
      for (std::size_t y = 0; y < s.rows; ++y) at(z, y, x) = line[y];
    }
  // z lines
  line.resize(s.depth);
  for (std::size_t y = 0; y < s.rows; ++y)
    for (std::size_t x = 0; x < s.cols; ++x) {
      for (std::size_t z = 0; z < s.depth; ++z) line[z] = at(z, y, x);
      envelope_1d(line, sp.z * sp.z, v, zbuf);
      for (std::size_t z = 0; z < s.depth; ++z) at(z, y, x) = line[z];
    }
  return field;
}

inline double directed_distance_transform(const std::vector<VoxelIndex>& from, const std::vector<VoxelIndex>& to,
                                          const Shape& s, const Spacing& sp) {
  const auto field = squared_distance_field(s, sp, to);
  double worst = 0.0;
  for (const auto& p : from) worst = std::max(worst, field[(p[0] * s.rows + p[1]) * s.cols + p[2]]);
  return std::sqrt(worst);
}

// Above this many boundary-pair evaluations the distance-transform path is used.
inline constexpr std::size_t kBruteForcePairLimit = 4'000'000;

}  // namespace detail

/// Exact symmetric Hausdorff distance between the 6-connected boundaries of
/// two masks, in millimetres.
inline double hausdorff(const BinaryMask& a, const BinaryMask& b, HausdorffMethod method = HausdorffMethod::Auto) {
  require_same_shape(a, b, "hausdorff");
  if (a.spacing() != b.spacing()) fail(ErrorCode::SpacingMismatch, "hausdorff: masks have different spacing");
  const auto ba = boundary_voxels(a);
  const auto bb = boundary_voxels(b);
  if (ba.empty() || bb.empty()) fail(ErrorCode::EmptyMask, "hausdorff is undefined for an empty mask");
  if (method == HausdorffMethod::Auto) {
    method = ba.size() * bb.size() <= detail::kBruteForcePairLimit ? HausdorffMethod::BruteForce
                                                                   : HausdorffMethod::DistanceTransform;
  }
  const auto& sp = a.spacing();
  if (method == HausdorffMethod::BruteForce) {
    return std::max(detail::directed_brute_force(ba, bb, sp), detail::directed_brute_force(bb, ba, sp));
  }
  return std::max(detail::directed_distance_transform(ba, bb, a.shape(), sp),
                  detail::directed_distance_transform(bb, ba, a.shape(), sp));
}

/// Directed h(from, to) over boundaries; exposed for property checks.
inline double directed_hausdorff(const BinaryMask& from, const BinaryMask& to) {
  require_same_shape(from, to, "directed_hausdorff");
  const auto bf = boundary_voxels(from);
  const auto bt = boundary_voxels(to);
  if (bf.empty() || bt.empty()) fail(ErrorCode::EmptyMask, "hausdorff is undefined for an empty mask");
  return detail::directed_brute_force(bf, bt, from.spacing());
}

struct CaseEvaluation {
  std::string id;
  std::vector<std::string> tags;
  double dice = 0.0;
  double hd_mm = 0.0;
};

struct GroupSummary {
  double dice_mean = 0.0;
  double hd_mean = 0.0;
  std::size_t n = 0;
};

/// Per-case scores and group means. Every case belongs to group "all" and
/// to one group per tag.
struct EvalReport {
  std::vector<CaseEvaluation> cases;
  std::map<std::string, GroupSummary> groups;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["cases"] = nlohmann::ordered_json::array();
    for (const auto& c : cases) {
      j["cases"].push_back({{"id", c.id}, {"dice", c.dice}, {"hd_mm", c.hd_mm}, {"tags", c.tags}});
    }
    j["groups"] = nlohmann::ordered_json::object();
    for (const auto& [tag, g] : groups) {
      j["groups"][tag] = {{"dice_mean", g.dice_mean}, {"hd_mean", g.hd_mean}, {"n", g.n}};
    }
    return j;
  }

  /// Leaderboard-style table; Dice in percent.
  std::string to_table() const {
    std::size_t width = 5;
    for (const auto& [tag, g] : groups) width = std::max(width, tag.size());
    std::ostringstream os;
    os << std::left << std::setw(static_cast<int>(width) + 2) << "Group" << std::right << std::setw(9) << "Dice"
       << std::setw(10) << "HD" << std::setw(6) << "n" << "\n";
    os << std::string(width + 2 + 25, '-') << "\n";
    os << std::fixed << std::setprecision(2);
    for (const auto& [tag, g] : groups) {
      os << std::left << std::setw(static_cast<int>(width) + 2) << tag << std::right << std::setw(9)
         << g.dice_mean * 100.0 << std::setw(10) << g.hd_mean << std::setw(6) << g.n << "\n";
    }
    return os.str();
  }
};

inline EvalReport aggregate_report(std::vector<CaseEvaluation> cases) {
  if (cases.empty()) fail(ErrorCode::InvariantViolation, "cannot aggregate an empty case list");
  std::sort(cases.begin(), cases.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  EvalReport report;
  std::map<std::string, std::vector<const CaseEvaluation*>> members;
  for (const auto& c : cases) {
    members["all"].push_back(&c);
    std::vector<std::string> tags = c.tags;
    std::sort(tags.begin(), tags.end());
    tags.erase(std::unique(tags.begin(), tags.end()), tags.end());
    for (const auto& t : tags)
      if (t != "all") members[t].push_back(&c);
  }
  for (const auto& [tag, list] : members) {
    GroupSummary g;
    g.n = list.size();
    for (const auto* c : list) {
      g.dice_mean += c->dice;
      g.hd_mean += c->hd_mm;
    }
    g.dice_mean /= static_cast<double>(g.n);
    g.hd_mean /= static_cast<double>(g.n);
    report.groups.emplace(tag, g);
  }
  report.cases = std::move(cases);
  return report;
}

}  // namespace sslprop

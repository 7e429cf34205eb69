/*
 * Copyright 2026 The FedMF Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// Rating reconstruction from two consecutive plaintext uploads of one user.
//
// Attack convention: the upload for a rated item j is G_j = u (r_j - <u, v_j>)
// and the user step is u' = u + 2 * step * sum_j v_j (r_j - <u, v_j>). Write
// x = u_k for a reference coordinate k. Since every G_j is parallel to u,
// u_m = (G_jm / G_jk) x, and with
//
//   alpha_m = 2 * step * sum_n v_nm G_nm
//   beta_j  = sum_m (v'_jm - v_jm) G_jm
//   gamma_j = sum_m alpha_m v'_jm / G_jm
//
// the user step becomes u'_m = u_m + alpha_m / u_m and equating the two
// expressions for r_j gives one scalar equation per item:
//
//   f(x) = G_jk / x - G'_jk / (x + alpha_k / x) - (x / G_jk) beta_j
//          - (G_jk / x) gamma_j = 0.
//
// f is odd, so roots come in +-x pairs; x and -x recover r and -r. We keep
// the candidate whose ratings best fit the plausible rating range, then the
// one most consistent across items.
//
// Trainer payloads are lr * (-2 u e_j), so they map to this convention by
// G = -P / (2 lr) with step = lr. V and V' are the item rows as the target
// user downloaded them in rounds t and t+1: the round snapshot minus the
// payloads of users served earlier in that round.

#ifndef FEDMF_ATTACK_HPP_
#define FEDMF_ATTACK_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fedmf/mf_core.hpp"
#include "fedmf/transcript.hpp"

namespace fedmf {

class PreconditionError : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

struct RootSearchOptions {
  double grid_min = 1e-6;
  double grid_max = 1e3;
  std::size_t grid_points = 4000;
  double tolerance = 1e-12;
  std::size_t max_iterations = 100;
  double accept_residual = 1e-10;
};

// ---------------------------------------------------------------------------
// Scalar solvers.

struct RootResult {
  double x = 0.0;
  double residual = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
};

// Plain Newton from x0. Stops when |f| < tol.
inline RootResult newton(const std::function<double(double)>& f,
                         const std::function<double(double)>& df, double x0,
                         double tol = 1e-12, std::size_t max_iter = 100) {
  RootResult r{x0, f(x0), 0, false};
  while (r.iterations < max_iter && !(std::abs(r.residual) < tol)) {
    const double slope = df(r.x);
    if (slope == 0.0 || !std::isfinite(slope)) break;
    r.x -= r.residual / slope;
    r.residual = f(r.x);
    ++r.iterations;
  }
  r.converged = std::abs(r.residual) < tol;
  return r;
}

// Newton kept inside [lo, hi] where f(lo), f(hi) have opposite signs; a step
// that leaves the bracket or fails to halve it becomes a bisection step.
inline RootResult newton_bisect(const std::function<double(double)>& f,
                                const std::function<double(double)>& df,
                                double lo, double hi, double tol = 1e-12,
                                std::size_t max_iter = 100) {
  double flo = f(lo);
  if (flo == 0.0) return {lo, 0.0, 0, true};
  double fhi = f(hi);
  if (fhi == 0.0) return {hi, 0.0, 0, true};
  if ((flo > 0) == (fhi > 0)) throw InvalidArgument("root not bracketed");
  double x = 0.5 * (lo + hi);
  double fx = f(x);
  double prev_width = std::abs(hi - lo);
  std::size_t it = 0;
  for (; it < max_iter && !(std::abs(fx) < tol); ++it) {
    if ((fx > 0) == (flo > 0)) {
      lo = x;
      flo = fx;
    } else {
      hi = x;
    }
    const double slope = df(x);
    double next = x - fx / slope;
    const double width = std::abs(hi - lo);
    const bool inside = std::isfinite(next) && next > std::min(lo, hi) &&
                        next < std::max(lo, hi);
    if (!inside || width > 0.5 * prev_width) next = 0.5 * (lo + hi);
    prev_width = width;
    if (next == x) break;
    x = next;
    fx = f(x);
  }
  return {x, fx, it, std::abs(fx) < tol};
}

// ---------------------------------------------------------------------------
// Attack inputs.

// Item rows as `user` downloaded them in round t.
inline ProfileMatrix user_view(const Transcript& t, std::size_t user,
                               std::size_t round) {
  if (round >= t.rounds.size()) {
    throw PreconditionError("round " + std::to_string(round) +
                            " beyond transcript length " +
                            std::to_string(t.rounds.size()));
  }
  const TranscriptRound& r = t.rounds[round];
  ProfileMatrix v = r.items_before;
  for (const GradientPayload& p : r.payloads) {
    if (p.user == user) return v;
    server_apply(v, p);
  }
  throw PreconditionError("user " + std::to_string(user) +
                          " did not upload in round " + std::to_string(round));
}

// Item rows after every upload and the mu term of round t.
inline const ProfileMatrix& snapshot_after_round(const Transcript& t,
                                                 std::size_t round) {
  if (round >= t.rounds.size()) throw PreconditionError("round out of range");
  return round + 1 < t.rounds.size() ? t.rounds[round + 1].items_before
                                     : t.items_final;
}

inline const GradientPayload& user_payload(const Transcript& t,
                                           std::size_t user, std::size_t round) {
  if (round >= t.rounds.size()) throw PreconditionError("round out of range");
  for (const GradientPayload& p : t.rounds[round].payloads) {
    if (p.user == user) return p;
  }
  throw PreconditionError("user " + std::to_string(user) +
                          " did not upload in round " + std::to_string(round));
}

// Everything the attack reads, already in the attack convention.
struct AttackInputs {
  std::size_t user = 0;
  std::size_t round = 0;
  std::size_t dim = 0;
  double step = 1.0;
  ProfileMatrix v_t;
  ProfileMatrix v_t1;
  std::map<std::size_t, std::vector<double>> g_t;   // item -> G^t_j
  std::map<std::size_t, std::vector<double>> g_t1;  // item -> G^{t+1}_j
};

inline AttackInputs prepare_attack(const TranscriptFile& file, std::size_t user,
                                   std::size_t round) {
  if (file.mode == Mode::kEncrypted) {
    throw PreconditionError(
        "encrypted transcript: uploads are ciphertexts, nothing to attack");
  }
  const Transcript& t = file.transcript;
  if (t.config.lambda_u != 0.0) {
    throw PreconditionError("attack requires lambda = 0");
  }
  if (user >= t.n_users) throw PreconditionError("user out of range");
  if (t.rounds.size() < 2) {
    throw PreconditionError("attack needs two consecutive rounds");
  }
  if (round + 1 >= t.rounds.size()) {
    throw PreconditionError("round " + std::to_string(round) +
                            " has no following round in a transcript of " +
                            std::to_string(t.rounds.size()));
  }
  AttackInputs in;
  in.user = user;
  in.round = round;
  in.dim = t.config.dim;
  in.v_t = user_view(t, user, round);
  in.v_t1 = user_view(t, user, round + 1);
  double scale = 1.0;
  if (file.convention == GradientConvention::kAlgorithm1) {
    in.step = t.config.learning_rate;
    scale = -1.0 / (2.0 * t.config.learning_rate);
  }
  auto load = [&](const GradientPayload& p,
                  std::map<std::size_t, std::vector<double>>& out) {
    for (const ItemGradient& g : p.entries) {
      std::vector<double> row(g.values.size());
      for (std::size_t m = 0; m < row.size(); ++m) row[m] = scale * g.values[m];
      out[g.item] = std::move(row);
    }
  };
  load(user_payload(t, user, round), in.g_t);
  load(user_payload(t, user, round + 1), in.g_t1);
  return in;
}

// ---------------------------------------------------------------------------
// The scalar equation.

struct ItemEquation {
  std::size_t item = 0;
  double g = 0.0;   // G^t_jk
  double g1 = 0.0;  // G^{t+1}_jk
  double alpha_k = 0.0;
  double beta = 0.0;
  double gamma = 0.0;

  double f(double x) const {
    return g / x - g1 * x / (x * x + alpha_k) - (beta / g) * x - g * gamma / x;
  }
  double df(double x) const {
    const double s = x * x + alpha_k;
    return -g / (x * x) - g1 * (alpha_k - x * x) / (s * s) - beta / g +
           g * gamma / (x * x);
  }
};

struct AttackScratch {
  std::vector<double> alpha;
  std::size_t k_ref = 0;
  std::map<std::size_t, double> beta;   // usable items only
  std::map<std::size_t, double> gamma;
};

inline bool all_nonzero(const std::vector<double>& xs) {
  return std::all_of(xs.begin(), xs.end(), [](double x) { return x != 0.0; });
}

inline bool any_nonzero(const std::vector<double>& xs) {
  return std::any_of(xs.begin(), xs.end(), [](double x) { return x != 0.0; });
}

// Coordinate maximizing min_j |G^t_jk| over items with a nonzero upload.
inline std::size_t choose_reference(const AttackInputs& in) {
  std::size_t best = 0;
  double best_score = -1.0;
  for (std::size_t k = 0; k < in.dim; ++k) {
    double score = std::numeric_limits<double>::infinity();
    bool any = false;
    for (const auto& [item, g] : in.g_t) {
      if (!any_nonzero(g)) continue;
      any = true;
      score = std::min(score, std::abs(g[k]));
    }
    if (!any) score = 0.0;
    if (score > best_score) {
      best_score = score;
      best = k;
    }
  }
  return best;
}

inline AttackScratch compute_scalars(const AttackInputs& in, std::size_t k) {
  if (k >= in.dim) throw PreconditionError("reference coordinate out of range");
  AttackScratch s;
  s.k_ref = k;
  s.alpha.assign(in.dim, 0.0);
  for (const auto& [item, g] : in.g_t) {
    const auto v = in.v_t.row(item);
    for (std::size_t m = 0; m < in.dim; ++m) s.alpha[m] += v[m] * g[m];
  }
  for (double& a : s.alpha) a *= 2.0 * in.step;

  for (const auto& [item, g] : in.g_t) {
    // gamma_j divides by every G_jm; items with a zero component are left out.
    if (!all_nonzero(g) || !in.g_t1.count(item)) continue;
    const auto v = in.v_t.row(item);
    const auto v1 = in.v_t1.row(item);
    double beta = 0.0;
    double gamma = 0.0;
    for (std::size_t m = 0; m < in.dim; ++m) {
      beta += (v1[m] - v[m]) * g[m];
      gamma += s.alpha[m] * v1[m] / g[m];
    }
    s.beta[item] = beta;
    s.gamma[item] = gamma;
  }
  return s;
}

inline ItemEquation item_equation(const AttackInputs& in,
                                  const AttackScratch& s, std::size_t item) {
  return {item,
          in.g_t.at(item)[s.k_ref],
          in.g_t1.at(item)[s.k_ref],
          s.alpha[s.k_ref],
          s.beta.at(item),
          s.gamma.at(item)};
}

// Real roots of one item equation with |f| < accept_residual, found by
// sign changes on a log grid over [grid_min, grid_max] on both signs.
inline std::vector<double> solve_uik(const ItemEquation& eq,
                                     const RootSearchOptions& opt = {}) {
  std::vector<double> roots;
  if (eq.g == 0.0 || !std::isfinite(eq.g) || !std::isfinite(eq.g1) ||
      !std::isfinite(eq.alpha_k) || !std::isfinite(eq.beta) ||
      !std::isfinite(eq.gamma)) {
    return roots;
  }
  auto f = [&](double x) { return eq.f(x); };
  auto df = [&](double x) { return eq.df(x); };
  const double ratio = std::log(opt.grid_max / opt.grid_min) /
                       static_cast<double>(opt.grid_points - 1);
  for (double sign : {1.0, -1.0}) {
    double prev_x = sign * opt.grid_min;
    double prev_f = f(prev_x);
    for (std::size_t i = 1; i < opt.grid_points; ++i) {
      const double x = sign * opt.grid_min * std::exp(ratio * static_cast<double>(i));
      const double fx = f(x);
      if (std::isfinite(prev_f) && std::isfinite(fx) && (prev_f > 0) != (fx > 0)) {
        const RootResult r = newton_bisect(f, df, std::min(prev_x, x),
                                           std::max(prev_x, x), opt.tolerance,
                                           opt.max_iterations);
        if (std::abs(r.residual) < opt.accept_residual) roots.push_back(r.x);
      }
      prev_x = x;
      prev_f = fx;
    }
  }
  std::sort(roots.begin(), roots.end());
  return roots;
}

// u_m = (G_jm / G_jk) * x from one item's upload.
inline std::vector<double> recover_user_vector(const std::vector<double>& g_row,
                                               std::size_t k, double u_k) {
  if (k >= g_row.size() || g_row[k] == 0.0) {
    throw PreconditionError("zero reference gradient component");
  }
  std::vector<double> u(g_row.size());
  for (std::size_t m = 0; m < u.size(); ++m) u[m] = g_row[m] / g_row[k] * u_k;
  return u;
}

enum class RecoveryStatus { kRecovered, kZeroResidual, kUnrecoverable };

inline const char* to_string(RecoveryStatus s) {
  switch (s) {
    case RecoveryStatus::kRecovered:
      return "recovered";
    case RecoveryStatus::kZeroResidual:
      return "zero_residual";
    case RecoveryStatus::kUnrecoverable:
      return "unrecoverable";
  }
  return "?";
}

struct RecoveredItem {
  std::size_t item = 0;
  double estimate = 0.0;
  RecoveryStatus status = RecoveryStatus::kRecovered;
  std::optional<double> truth;
  std::optional<double> abs_error;
};

struct RecoveredRatings {
  std::vector<RecoveredItem> items;
  std::optional<double> max_abs_error;
};

// r_j = G_jk / u_k + <u, v_j> for each uploaded item. Listed all-zero
// uploads in PartText mean a zero residual, so r_j = <u, v_j>. In FullText
// an all-zero row is indistinguishable from an unrated item and is skipped.
inline RecoveredRatings recover_ratings(
    const std::vector<double>& u, const ProfileMatrix& v_t,
    const std::map<std::size_t, std::vector<double>>& g_t, std::size_t k,
    PayloadMode mode = PayloadMode::kPartText) {
  if (k >= u.size() || u[k] == 0.0) {
    throw PreconditionError("user coordinate k is zero");
  }
  RecoveredRatings out;
  for (const auto& [item, g] : g_t) {
    RecoveredItem r{item, 0.0, RecoveryStatus::kRecovered, {}, {}};
    const double dot = predict(u, v_t.row(item));
    if (!any_nonzero(g)) {
      if (mode == PayloadMode::kFullText) continue;
      r.status = RecoveryStatus::kZeroResidual;
      r.estimate = dot;
    } else if (g[k] == 0.0) {
      r.status = RecoveryStatus::kUnrecoverable;
      r.estimate = std::numeric_limits<double>::quiet_NaN();
    } else {
      r.estimate = g[k] / u[k] + dot;
    }
    out.items.push_back(r);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Orchestration.

struct RatingRange {
  double lo = 1.0;
  double hi = 5.0;
};

struct AttackCandidate {
  double u_k = 0.0;
  std::size_t source_item = 0;
  double in_range_fraction = 0.0;
  double out_of_range_distance = 0.0;
  double inconsistency = 0.0;  // max_j |r_j from round t - r_j from round t+1|
};

struct AttackReport {
  bool success = false;
  std::string diagnostics;
  std::size_t user = 0;
  std::size_t round = 0;
  std::size_t k_ref = 0;
  std::size_t equations = 0;      // usable items
  std::size_t bracketed = 0;      // items whose equation produced a root
  std::vector<AttackCandidate> candidates;
  std::optional<AttackCandidate> chosen;
  std::vector<double> user_vector;
  double payload_residual = 0.0;  // max relative error regenerating G^t
  RecoveredRatings ratings;
};

namespace internal {

inline double score_inconsistency(const AttackInputs& in,
                                  const AttackScratch& s,
                                  const std::vector<double>& u, double u_k) {
  const std::size_t k = s.k_ref;
  std::vector<double> u1(in.dim);
  for (std::size_t m = 0; m < in.dim; ++m) {
    u1[m] = u[m] + (s.alpha[m] == 0.0 ? 0.0 : s.alpha[m] / u[m]);
  }
  double worst = 0.0;
  for (const auto& [item, g] : in.g_t) {
    if (g[k] == 0.0 || !in.g_t1.count(item) || u1[k] == 0.0) continue;
    const double r_t = g[k] / u_k + predict(u, in.v_t.row(item));
    const double r_t1 = in.g_t1.at(item)[k] / u1[k] + predict(u1, in.v_t1.row(item));
    const double diff = std::abs(r_t - r_t1);
    worst = std::isfinite(diff) ? std::max(worst, diff)
                                : std::numeric_limits<double>::infinity();
  }
  return worst;
}

}  // namespace internal

inline AttackReport attack(const TranscriptFile& file, std::size_t user,
                           std::size_t round, RatingRange range,
                           const RootSearchOptions& opt = {}) {
  if (!(range.lo < range.hi)) throw PreconditionError("empty rating range");
  const AttackInputs in = prepare_attack(file, user, round);
  AttackReport rep;
  rep.user = user;
  rep.round = round;
  if (in.g_t.empty()) {
    rep.diagnostics = "user uploaded no item gradients";
    return rep;
  }
  const AttackScratch s = compute_scalars(in, choose_reference(in));
  rep.k_ref = s.k_ref;
  rep.equations = s.beta.size();
  const PayloadMode mode = user_payload(file.transcript, user, round).mode;

  // Reference row for the ratio identity: the largest |G_jk|.
  std::size_t ref_item = in.g_t.begin()->first;
  for (const auto& [item, g] : in.g_t) {
    if (std::abs(g[s.k_ref]) > std::abs(in.g_t.at(ref_item)[s.k_ref])) ref_item = item;
  }
  const std::vector<double>& ref_row = in.g_t.at(ref_item);
  if (ref_row[s.k_ref] == 0.0) {
    rep.diagnostics = "every upload is zero in the reference coordinate";
    return rep;
  }

  for (const auto& [item, beta] : s.beta) {
    const auto roots = solve_uik(item_equation(in, s, item), opt);
    if (!roots.empty()) ++rep.bracketed;
    for (double x : roots) {
      const bool dup = std::any_of(
          rep.candidates.begin(), rep.candidates.end(),
          [&](const AttackCandidate& c) {
            return std::abs(c.u_k - x) <= 1e-9 * std::max(1.0, std::abs(x));
          });
      if (dup) continue;
      const auto u = recover_user_vector(ref_row, s.k_ref, x);
      const auto rr = recover_ratings(u, in.v_t, in.g_t, s.k_ref, mode);
      AttackCandidate c{x, item, 0.0, 0.0, 0.0};
      std::size_t counted = 0;
      std::size_t inside = 0;
      for (const RecoveredItem& r : rr.items) {
        if (r.status == RecoveryStatus::kUnrecoverable) continue;
        ++counted;
        if (r.estimate >= range.lo && r.estimate <= range.hi) {
          ++inside;
        } else {
          c.out_of_range_distance += r.estimate < range.lo ? range.lo - r.estimate
                                                           : r.estimate - range.hi;
        }
      }
      if (!std::isfinite(c.out_of_range_distance)) {
        c.out_of_range_distance = std::numeric_limits<double>::infinity();
      }
      c.in_range_fraction =
          counted == 0 ? 0.0 : static_cast<double>(inside) / static_cast<double>(counted);
      c.inconsistency = internal::score_inconsistency(in, s, u, x);
      rep.candidates.push_back(c);
    }
  }

  if (rep.candidates.empty()) {
    rep.diagnostics = "no root bracketed on any of " +
                      std::to_string(rep.equations) + " item equations";
    return rep;
  }
  const auto best = std::min_element(
      rep.candidates.begin(), rep.candidates.end(),
      [](const AttackCandidate& a, const AttackCandidate& b) {
        if (a.in_range_fraction != b.in_range_fraction) {
          return a.in_range_fraction > b.in_range_fraction;
        }
        if (a.out_of_range_distance != b.out_of_range_distance) {
          return a.out_of_range_distance < b.out_of_range_distance;
        }
        return a.inconsistency < b.inconsistency;
      });
  rep.chosen = *best;
  if (best->in_range_fraction == 0.0) {
    rep.diagnostics = "no candidate yields ratings inside the range";
    return rep;
  }

  rep.user_vector = recover_user_vector(ref_row, s.k_ref, best->u_k);
  rep.ratings = recover_ratings(rep.user_vector, in.v_t, in.g_t, s.k_ref, mode);

  // Regenerate G^t from the recovered profile and ratings.
  for (const RecoveredItem& r : rep.ratings.items) {
    if (r.status == RecoveryStatus::kUnrecoverable) continue;
    const auto& g = in.g_t.at(r.item);
    const double e = r.estimate - predict(rep.user_vector, in.v_t.row(r.item));
    double norm = 0.0;
    double diff = 0.0;
    for (std::size_t m = 0; m < in.dim; ++m) {
      norm = std::max(norm, std::abs(g[m]));
      diff = std::max(diff, std::abs(rep.user_vector[m] * e - g[m]));
    }
    if (norm > 0.0) rep.payload_residual = std::max(rep.payload_residual, diff / norm);
  }

  if (const auto& truth = file.transcript.ground_truth) {
    std::map<std::size_t, double> own;
    for (const Rating& r : truth->user_ratings(user)) own[r.item] = r.value;
    double worst = 0.0;
    for (RecoveredItem& r : rep.ratings.items) {
      const auto it = own.find(r.item);
      if (it == own.end()) continue;
      r.truth = it->second;
      r.abs_error = std::abs(r.estimate - it->second);
      if (!std::isfinite(*r.abs_error)) r.abs_error = std::numeric_limits<double>::infinity();
      worst = std::max(worst, *r.abs_error);
    }
    rep.ratings.max_abs_error = worst;
  }
  rep.success = true;
  return rep;
}

inline Json report_to_json(const AttackReport& r) {
  Json items = Json::array();
  for (const RecoveredItem& it : r.ratings.items) {
    Json j{{"item", it.item}, {"status", to_string(it.status)}};
    j["estimate"] = std::isfinite(it.estimate) ? Json(it.estimate) : Json(nullptr);
    if (it.truth) j["truth"] = *it.truth;
    if (it.abs_error) j["abs_error"] = *it.abs_error;
    items.push_back(std::move(j));
  }
  Json out{{"success", r.success},
           {"user", r.user},
           {"round", r.round},
           {"reference_coordinate", r.k_ref},
           {"item_equations", r.equations},
           {"bracketed_equations", r.bracketed},
           {"candidates", r.candidates.size()},
           {"user_vector", r.user_vector},
           {"payload_residual", r.payload_residual},
           {"ratings", std::move(items)}};
  if (r.chosen) {
    out["chosen_root"] = r.chosen->u_k;
    out["in_range_fraction"] = r.chosen->in_range_fraction;
    out["inconsistency"] = r.chosen->inconsistency;
  }
  if (r.ratings.max_abs_error) out["max_abs_error"] = *r.ratings.max_abs_error;
  if (!r.diagnostics.empty()) out["diagnostics"] = r.diagnostics;
  return out;
}

}  // namespace fedmf

#endif  // FEDMF_ATTACK_HPP_

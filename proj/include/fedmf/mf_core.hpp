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

// Matrix-factorization numerics: the objective, its per-user and per-item
// gradients, the user-side and server-side SGD steps, and two trainers that
// run the same sequential per-user schedule (one on the full matrices, one
// through explicit gradient payloads).
//
// Gradient convention. The objective is
//
//   F(U, V) = (1/M) sum_{(i,j)} (r_ij - <u_i, v_j>)^2 + lambda |U|^2 + mu |V|^2
//
// while the gradients follow the literal per-pair forms without the 1/M:
//
//   grad_{u_i} = -2 sum_{j rated by i} v_j (r_ij - <u_i, v_j>) + 2 lambda u_i
//   grad_{v_j} = -2 sum_{i who rated j} u_i (r_ij - <u_i, v_j>) + 2 mu v_j
//
// A user's payload carries only the residual part of grad_{v_j}, scaled by
// the learning rate. The 2 mu v_j part is applied by the server once per
// round to every item row (see regularize_items).

#ifndef FEDMF_MF_CORE_HPP_
#define FEDMF_MF_CORE_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fedmf/common.hpp"

namespace fedmf {

struct Rating {
  std::size_t user = 0;
  std::size_t item = 0;
  double value = 0.0;

  friend bool operator==(const Rating&, const Rating&) = default;
};

// Sparse user x item ratings. Entries are kept sorted by (user, item) so each
// user's ratings form one contiguous, item-ordered block.
class RatingTable {
 public:
  RatingTable() : offsets_(1, 0) {}

  RatingTable(std::size_t n_users, std::size_t n_items,
              std::vector<Rating> entries)
      : n_users_(n_users), n_items_(n_items), entries_(std::move(entries)) {
    for (const Rating& r : entries_) {
      if (r.user >= n_users_ || r.item >= n_items_) {
        throw InvalidArgument("rating (" + std::to_string(r.user) + ", " +
                              std::to_string(r.item) + ") out of range " +
                              std::to_string(n_users_) + "x" +
                              std::to_string(n_items_));
      }
      if (!std::isfinite(r.value)) {
        throw InvalidArgument("non-finite rating");
      }
    }
    std::sort(entries_.begin(), entries_.end(),
              [](const Rating& a, const Rating& b) {
                return a.user != b.user ? a.user < b.user : a.item < b.item;
              });
    for (std::size_t i = 1; i < entries_.size(); ++i) {
      if (entries_[i].user == entries_[i - 1].user &&
          entries_[i].item == entries_[i - 1].item) {
        throw InvalidArgument("duplicate rating for (" +
                              std::to_string(entries_[i].user) + ", " +
                              std::to_string(entries_[i].item) + ")");
      }
    }
    offsets_.assign(n_users_ + 1, 0);
    for (const Rating& r : entries_) ++offsets_[r.user + 1];
    for (std::size_t u = 0; u < n_users_; ++u) offsets_[u + 1] += offsets_[u];
  }

  std::size_t n_users() const { return n_users_; }
  std::size_t n_items() const { return n_items_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  std::span<const Rating> entries() const { return entries_; }

  std::span<const Rating> user_ratings(std::size_t user) const {
    if (user >= n_users_) throw InvalidArgument("user id out of range");
    return std::span<const Rating>(entries_).subspan(
        offsets_[user], offsets_[user + 1] - offsets_[user]);
  }

  friend bool operator==(const RatingTable& a, const RatingTable& b) {
    return a.n_users_ == b.n_users_ && a.n_items_ == b.n_items_ &&
           a.entries_ == b.entries_;
  }

 private:
  std::size_t n_users_ = 0;
  std::size_t n_items_ = 0;
  std::vector<Rating> entries_;
  std::vector<std::size_t> offsets_;
};

// Dense row-major rows x dim matrix of latent factors.
class ProfileMatrix {
 public:
  ProfileMatrix() = default;

  ProfileMatrix(std::size_t rows, std::size_t dim)
      : rows_(rows), dim_(dim), values_(rows * dim, 0.0) {
    if (dim == 0) throw InvalidArgument("profile dimension must be positive");
  }

  ProfileMatrix(std::size_t rows, std::size_t dim, std::vector<double> values)
      : rows_(rows), dim_(dim), values_(std::move(values)) {
    if (dim == 0) throw InvalidArgument("profile dimension must be positive");
    if (values_.size() != rows * dim) {
      throw InvalidArgument("profile value count does not match shape");
    }
  }

  // Entries uniform in [0, scale), drawn row-major from `seed`.
  static ProfileMatrix uniform(std::size_t rows, std::size_t dim, double scale,
                               std::uint64_t seed) {
    ProfileMatrix m(rows, dim);
    SplitMix64 rng(seed);
    for (double& x : m.values_) x = rng.uniform() * scale;
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t dim() const { return dim_; }

  std::span<const double> row(std::size_t i) const {
    return std::span<const double>(values_).subspan(i * dim_, dim_);
  }
  std::span<double> row(std::size_t i) {
    return std::span<double>(values_).subspan(i * dim_, dim_);
  }

  double& operator()(std::size_t i, std::size_t k) {
    return values_[i * dim_ + k];
  }
  double operator()(std::size_t i, std::size_t k) const {
    return values_[i * dim_ + k];
  }

  std::span<const double> values() const { return values_; }
  std::span<double> values() { return values_; }

  bool all_finite() const {
    return std::all_of(values_.begin(), values_.end(),
                       [](double x) { return std::isfinite(x); });
  }

  friend bool operator==(const ProfileMatrix&, const ProfileMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t dim_ = 0;
  std::vector<double> values_;
};

inline double max_abs_difference(const ProfileMatrix& a,
                                 const ProfileMatrix& b) {
  if (a.rows() != b.rows() || a.dim() != b.dim()) {
    throw InvalidArgument("shape mismatch");
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < a.values().size(); ++i) {
    worst = std::max(worst, std::abs(a.values()[i] - b.values()[i]));
  }
  return worst;
}

enum class PayloadMode { kFullText, kPartText };

inline const char* to_string(PayloadMode mode) {
  return mode == PayloadMode::kFullText ? "full" : "part";
}

inline PayloadMode parse_payload_mode(std::string_view s) {
  if (s == "full") return PayloadMode::kFullText;
  if (s == "part") return PayloadMode::kPartText;
  throw InvalidArgument("unknown payload mode '" + std::string(s) + "'");
}

struct TrainConfig {
  std::size_t dim = 100;
  double learning_rate = 0.01;
  double lambda_u = 1e-4;
  double mu_v = 1e-4;
  std::size_t max_iters = 100;
  double stop_threshold = 1e-4;
  std::uint64_t seed = 0;
  double init_scale = 0.1;
  PayloadMode payload_mode = PayloadMode::kPartText;

  void validate() const {
    if (dim == 0) throw InvalidArgument("dim must be positive");
    if (!(learning_rate > 0.0)) {
      throw InvalidArgument("learning rate must be positive");
    }
    if (!(lambda_u >= 0.0)) throw InvalidArgument("lambda must be >= 0");
    if (!(mu_v >= 0.0)) throw InvalidArgument("mu must be >= 0");
    if (!(stop_threshold >= 0.0)) {
      throw InvalidArgument("stop threshold must be >= 0");
    }
    if (!(init_scale >= 0.0)) throw InvalidArgument("init scale must be >= 0");
  }
};

struct ItemGradient {
  std::size_t item = 0;
  std::vector<double> values;

  friend bool operator==(const ItemGradient&, const ItemGradient&) = default;
};

// One user's upload for one round. PartText lists the rated items only;
// FullText lists every item in order, zero-filled where unrated.
struct GradientPayload {
  std::size_t user = 0;
  PayloadMode mode = PayloadMode::kPartText;
  std::vector<ItemGradient> entries;

  double max_abs() const {
    double worst = 0.0;
    for (const auto& e : entries) {
      for (double x : e.values) worst = std::max(worst, std::abs(x));
    }
    return worst;
  }

  friend bool operator==(const GradientPayload&,
                         const GradientPayload&) = default;
};

// Server-visible log of a plaintext run: the item profiles before each round
// and the payloads uploaded during it, in application order.
struct TranscriptRound {
  std::size_t round = 0;
  ProfileMatrix items_before;
  std::vector<GradientPayload> payloads;

  friend bool operator==(const TranscriptRound&,
                         const TranscriptRound&) = default;
};

struct Transcript {
  TrainConfig config;
  std::size_t n_users = 0;
  std::size_t n_items = 0;
  std::vector<TranscriptRound> rounds;
  ProfileMatrix items_final;
  // Optional private ratings, embedded only by evaluation harnesses.
  std::optional<RatingTable> ground_truth;
};

// Seeded initializers shared by every trainer and by the protocol parties.
inline ProfileMatrix init_item_profiles(std::size_t n_items,
                                        const TrainConfig& config) {
  return ProfileMatrix::uniform(n_items, config.dim, config.init_scale,
                                derive_seed(config.seed, 0));
}

inline std::vector<double> init_user_profile(std::size_t user,
                                             const TrainConfig& config) {
  ProfileMatrix row = ProfileMatrix::uniform(
      1, config.dim, config.init_scale, derive_seed(config.seed, user + 1));
  return {row.values().begin(), row.values().end()};
}

inline double predict(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) {
    throw InvalidArgument("dimension mismatch: " + std::to_string(u.size()) +
                          " vs " + std::to_string(v.size()));
  }
  double sum = 0.0;
  for (std::size_t k = 0; k < u.size(); ++k) sum += u[k] * v[k];
  return sum;
}

namespace internal {

inline void check_user_inputs(std::span<const double> u,
                              const ProfileMatrix& items,
                              std::span<const Rating> ratings) {
  if (u.size() != items.dim()) {
    throw InvalidArgument("user vector length " + std::to_string(u.size()) +
                          " does not match item dim " +
                          std::to_string(items.dim()));
  }
  for (const Rating& r : ratings) {
    if (r.item >= items.rows()) {
      throw InvalidArgument("rated item " + std::to_string(r.item) +
                            " outside item profiles (" +
                            std::to_string(items.rows()) + " rows)");
    }
  }
}

inline double squared_norm(std::span<const double> xs) {
  double s = 0.0;
  for (double x : xs) s += x * x;
  return s;
}

}  // namespace internal

// Sum of squared residuals over all rated pairs.
inline double sum_squared_error(const ProfileMatrix& users,
                                const ProfileMatrix& items,
                                const RatingTable& ratings) {
  double sse = 0.0;
  for (const Rating& r : ratings.entries()) {
    const double e = r.value - predict(users.row(r.user), items.row(r.item));
    sse += e * e;
  }
  return sse;
}

inline double loss(const ProfileMatrix& users, const ProfileMatrix& items,
                   const RatingTable& ratings, double lambda_u, double mu_v) {
  if (ratings.empty()) throw InvalidArgument("loss of an empty rating set");
  if (users.rows() < ratings.n_users() || items.rows() < ratings.n_items()) {
    throw InvalidArgument("profiles do not cover the rating table");
  }
  return sum_squared_error(users, items, ratings) /
             static_cast<double>(ratings.size()) +
         lambda_u * internal::squared_norm(users.values()) +
         mu_v * internal::squared_norm(items.values());
}

inline std::vector<double> user_gradient(std::span<const double> u,
                                         const ProfileMatrix& items,
                                         std::span<const Rating> ratings,
                                         double lambda_u) {
  internal::check_user_inputs(u, items, ratings);
  const std::size_t d = u.size();
  std::vector<double> grad(d, 0.0);
  for (const Rating& r : ratings) {
    const auto v = items.row(r.item);
    const double e = r.value - predict(u, v);
    for (std::size_t k = 0; k < d; ++k) grad[k] += v[k] * e;
  }
  for (std::size_t k = 0; k < d; ++k) {
    grad[k] = -2.0 * grad[k] + 2.0 * lambda_u * u[k];
  }
  return grad;
}

// Residual part of grad_{v_j} contributed by this user, one entry per rated
// item in ascending item order.
inline std::vector<ItemGradient> item_gradients(std::span<const double> u,
                                                const ProfileMatrix& items,
                                                std::span<const Rating> ratings) {
  internal::check_user_inputs(u, items, ratings);
  std::vector<ItemGradient> out;
  out.reserve(ratings.size());
  for (const Rating& r : ratings) {
    const double e = r.value - predict(u, items.row(r.item));
    ItemGradient g{r.item, std::vector<double>(u.size())};
    for (std::size_t k = 0; k < u.size(); ++k) g.values[k] = -2.0 * u[k] * e;
    out.push_back(std::move(g));
  }
  return out;
}

struct LocalUpdate {
  std::vector<double> user_vector;
  GradientPayload payload;
};

// User side of one step: u <- u - lr * grad_u, payload = lr * item gradients.
inline LocalUpdate local_update(std::size_t user, std::span<const double> u,
                                const ProfileMatrix& items,
                                std::span<const Rating> ratings,
                                const TrainConfig& config) {
  const std::vector<double> grad_u =
      user_gradient(u, items, ratings, config.lambda_u);
  std::vector<ItemGradient> grads = item_gradients(u, items, ratings);

  LocalUpdate out;
  out.user_vector.resize(u.size());
  for (std::size_t k = 0; k < u.size(); ++k) {
    out.user_vector[k] = u[k] - config.learning_rate * grad_u[k];
  }
  for (auto& g : grads) {
    for (double& x : g.values) x = config.learning_rate * x;
  }

  out.payload.user = user;
  out.payload.mode = config.payload_mode;
  if (config.payload_mode == PayloadMode::kPartText) {
    out.payload.entries = std::move(grads);
  } else {
    out.payload.entries.reserve(items.rows());
    std::size_t next = 0;
    for (std::size_t j = 0; j < items.rows(); ++j) {
      if (next < grads.size() && grads[next].item == j) {
        out.payload.entries.push_back(std::move(grads[next++]));
      } else {
        out.payload.entries.push_back({j, std::vector<double>(u.size(), 0.0)});
      }
    }
  }
  return out;
}

// Server side of one step: v_j <- v_j - payload_j for every listed item.
inline void server_apply(ProfileMatrix& items, const GradientPayload& payload) {
  for (const auto& e : payload.entries) {
    if (e.item >= items.rows()) {
      throw InvalidArgument("payload item " + std::to_string(e.item) +
                            " out of range");
    }
    if (e.values.size() != items.dim()) {
      throw InvalidArgument("payload vector length mismatch");
    }
  }
  for (const auto& e : payload.entries) {
    auto v = items.row(e.item);
    for (std::size_t k = 0; k < v.size(); ++k) v[k] -= e.values[k];
  }
}

// Once per round, after every payload: v_j <- v_j - lr * 2 mu v_j.
inline void regularize_items(ProfileMatrix& items, const TrainConfig& config) {
  if (config.mu_v == 0.0) return;
  for (double& x : items.values()) {
    x -= config.learning_rate * (2.0 * config.mu_v * x);
  }
}

struct TrainResult {
  ProfileMatrix users;
  ProfileMatrix items;
  std::vector<double> loss_history;  // initial loss, then one per round
  std::size_t iterations = 0;
  std::optional<Transcript> transcript;
};

// Reference trainer over the full matrices. Runs the same schedule as the
// distributed trainer: users in ascending id order each take one step against
// the current V, their item deltas land immediately, and the mu term is
// applied once at the end of the round. It is written independently of
// local_update/server_apply so the two can check each other.
inline TrainResult train_centralized(const RatingTable& ratings,
                                     const TrainConfig& config) {
  config.validate();
  if (ratings.empty()) throw InvalidArgument("empty rating table");
  const std::size_t d = config.dim;

  TrainResult result;
  result.items = init_item_profiles(ratings.n_items(), config);
  result.users = ProfileMatrix(ratings.n_users(), d);
  for (std::size_t i = 0; i < ratings.n_users(); ++i) {
    const auto u0 = init_user_profile(i, config);
    std::copy(u0.begin(), u0.end(), result.users.row(i).begin());
  }
  ProfileMatrix& U = result.users;
  ProfileMatrix& V = result.items;
  result.loss_history.push_back(
      loss(U, V, ratings, config.lambda_u, config.mu_v));

  std::vector<double> grad_u(d);
  std::vector<double> residuals;
  for (std::size_t iter = 0; iter < config.max_iters; ++iter) {
    double max_step = 0.0;
    for (std::size_t i = 0; i < ratings.n_users(); ++i) {
      const auto rated = ratings.user_ratings(i);
      auto u = U.row(i);
      residuals.assign(rated.size(), 0.0);
      std::fill(grad_u.begin(), grad_u.end(), 0.0);
      for (std::size_t n = 0; n < rated.size(); ++n) {
        const auto v = V.row(rated[n].item);
        double dot = 0.0;
        for (std::size_t k = 0; k < d; ++k) dot += u[k] * v[k];
        residuals[n] = rated[n].value - dot;
        for (std::size_t k = 0; k < d; ++k) grad_u[k] += v[k] * residuals[n];
      }
      // Item deltas use the pre-update u_i, so compute them before moving u.
      for (std::size_t n = 0; n < rated.size(); ++n) {
        auto v = V.row(rated[n].item);
        for (std::size_t k = 0; k < d; ++k) {
          const double step =
              config.learning_rate * (-2.0 * u[k] * residuals[n]);
          max_step = std::max(max_step, std::abs(step));
          v[k] -= step;
        }
      }
      for (std::size_t k = 0; k < d; ++k) {
        const double g = -2.0 * grad_u[k] + 2.0 * config.lambda_u * u[k];
        u[k] = u[k] - config.learning_rate * g;
      }
      if (!std::all_of(u.begin(), u.end(),
                       [](double x) { return std::isfinite(x); })) {
        throw DivergenceError(iter, "user " + std::to_string(i));
      }
    }
    regularize_items(V, config);
    if (!V.all_finite()) throw DivergenceError(iter, "item profiles");
    result.loss_history.push_back(
        loss(U, V, ratings, config.lambda_u, config.mu_v));
    ++result.iterations;
    if (max_step < config.stop_threshold) break;
  }
  return result;
}

// Algorithm-style trainer: each user downloads V, runs local_update, and the
// server applies the payload before the next user downloads.
inline TrainResult train_distributed_plaintext(const RatingTable& ratings,
                                               const TrainConfig& config,
                                               bool record_transcript = false) {
  config.validate();
  if (ratings.empty()) throw InvalidArgument("empty rating table");

  TrainResult result;
  result.items = init_item_profiles(ratings.n_items(), config);
  result.users = ProfileMatrix(ratings.n_users(), config.dim);
  for (std::size_t i = 0; i < ratings.n_users(); ++i) {
    const auto u0 = init_user_profile(i, config);
    std::copy(u0.begin(), u0.end(), result.users.row(i).begin());
  }
  if (record_transcript) {
    result.transcript.emplace();
    result.transcript->config = config;
    result.transcript->n_users = ratings.n_users();
    result.transcript->n_items = ratings.n_items();
  }
  result.loss_history.push_back(loss(result.users, result.items, ratings,
                                     config.lambda_u, config.mu_v));

  for (std::size_t iter = 0; iter < config.max_iters; ++iter) {
    TranscriptRound* log = nullptr;
    if (record_transcript) {
      result.transcript->rounds.push_back({iter, result.items, {}});
      log = &result.transcript->rounds.back();
    }
    double max_step = 0.0;
    for (std::size_t i = 0; i < ratings.n_users(); ++i) {
      LocalUpdate step = local_update(i, result.users.row(i), result.items,
                                      ratings.user_ratings(i), config);
      if (!std::all_of(step.user_vector.begin(), step.user_vector.end(),
                       [](double x) { return std::isfinite(x); })) {
        throw DivergenceError(iter, "user " + std::to_string(i));
      }
      std::copy(step.user_vector.begin(), step.user_vector.end(),
                result.users.row(i).begin());
      max_step = std::max(max_step, step.payload.max_abs());
      server_apply(result.items, step.payload);
      if (log != nullptr) log->payloads.push_back(std::move(step.payload));
    }
    regularize_items(result.items, config);
    if (!result.items.all_finite()) {
      throw DivergenceError(iter, "item profiles");
    }
    result.loss_history.push_back(loss(result.users, result.items, ratings,
                                       config.lambda_u, config.mu_v));
    ++result.iterations;
    if (max_step < config.stop_threshold) break;
  }
  if (record_transcript) result.transcript->items_final = result.items;
  return result;
}

}  // namespace fedmf

#endif  // FEDMF_MF_CORE_HPP_

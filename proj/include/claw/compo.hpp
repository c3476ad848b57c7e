#pragma once

// Competitive preference optimization over tabular softmax policies.
//
// A policy is a matrix of logits; each row is one decision context and each
// column one choice. A trajectory is scored as a Trace of (row, col) steps, so
// the same code covers the single-step toy policy (row = prompt, col = outcome)
// and the autoregressive token table (row = (prompt, previous token)).

#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include <Eigen/Dense>

namespace claw::compo {

using Index = Eigen::Index;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

class NonFinite : public std::runtime_error {
 public:
  explicit NonFinite(const std::string& what, std::optional<int> step = std::nullopt)
      : std::runtime_error(step ? what + " (training step " + std::to_string(*step) + ")" : what), step_(step) {}
  [[nodiscard]] std::optional<int> step() const { return step_; }

 private:
  std::optional<int> step_;
};

struct Step {
  Index row = 0;
  Index col = 0;
  friend bool operator==(const Step&, const Step&) = default;
};
using Trace = std::vector<Step>;

inline Trace outcome(Index prompt, Index choice) { return Trace{{prompt, choice}}; }

enum class SequenceScoring : std::uint8_t { Sum, LengthNormalized };

// log(1 + e^x) without overflow for large |x|.
template <typename Scalar>
Scalar softplus(Scalar x) {
  using std::exp;
  using std::log1p;
  return x > Scalar(0) ? x + log1p(exp(-x)) : log1p(exp(x));
}

template <typename Scalar>
Scalar sigmoid(Scalar x) {
  using std::exp;
  if (x >= Scalar(0)) return Scalar(1) / (Scalar(1) + exp(-x));
  Scalar e = exp(x);
  return e / (Scalar(1) + e);
}

template <typename Scalar>
Scalar log_sigmoid(Scalar x) {
  return -softplus(-x);
}

template <typename Derived>
typename Derived::Scalar logsumexp(const Eigen::DenseBase<Derived>& v) {
  using Scalar = typename Derived::Scalar;
  const Scalar m = v.maxCoeff();
  if (!std::isfinite(static_cast<double>(m))) return m;
  return m + std::log((v.derived().array() - m).exp().sum());
}

template <typename Derived>
Vector<typename Derived::Scalar> softmax(const Eigen::MatrixBase<Derived>& v) {
  using Scalar = typename Derived::Scalar;
  Vector<Scalar> shifted = (v.array() - v.maxCoeff()).exp().matrix();
  return shifted / shifted.sum();
}

template <typename Scalar = double>
class TabularPolicy {
 public:
  using scalar_type = Scalar;

  TabularPolicy() = default;
  TabularPolicy(Index rows, Index cols, SequenceScoring scoring = SequenceScoring::Sum)
      : logits_(Matrix<Scalar>::Zero(rows, cols)), scoring_(scoring) {}
  explicit TabularPolicy(Matrix<Scalar> logits, SequenceScoring scoring = SequenceScoring::Sum)
      : logits_(std::move(logits)), scoring_(scoring) {}

  [[nodiscard]] Index rows() const { return logits_.rows(); }
  [[nodiscard]] Index cols() const { return logits_.cols(); }
  [[nodiscard]] const Matrix<Scalar>& logits() const { return logits_; }
  Matrix<Scalar>& logits() { return logits_; }
  [[nodiscard]] SequenceScoring scoring() const { return scoring_; }

  [[nodiscard]] Scalar log_prob(Index row, Index col) const { return logits_(row, col) - logsumexp(logits_.row(row)); }

  [[nodiscard]] Scalar log_prob(const Trace& trace) const {
    Scalar total(0);
    for (const auto& s : trace) total += log_prob(s.row, s.col);
    if (scoring_ == SequenceScoring::LengthNormalized && !trace.empty()) total /= static_cast<Scalar>(trace.size());
    return total;
  }

  // Full distribution over the choices of one context (toy policies only).
  [[nodiscard]] Vector<Scalar> distribution(Index row) const { return softmax(logits_.row(row).transpose()); }

  [[nodiscard]] std::vector<Index> enumerate_outcomes(Index /*row*/) const {
    std::vector<Index> out(static_cast<std::size_t>(cols()));
    for (Index i = 0; i < cols(); ++i) out[static_cast<std::size_t>(i)] = i;
    return out;
  }

 private:
  Matrix<Scalar> logits_;
  SequenceScoring scoring_ = SequenceScoring::Sum;
};

// Single-step policy: row = prompt id, column = outcome id.
template <typename Scalar = double>
using ToySoftmaxPolicy = TabularPolicy<Scalar>;

struct PreferenceExample {
  Trace chosen;
  Trace rejected;
};

template <typename Scalar>
void require_finite(Scalar v, const char* what) {
  if (!std::isfinite(static_cast<double>(v))) throw NonFinite(std::string("non-finite ") + what);
}

// beta * (log pi(y|x) - log pi_ref(y|x))
template <typename Policy, typename Scalar = typename Policy::scalar_type>
Scalar implied_reward(const Policy& policy, const Policy& ref, const Trace& y, std::type_identity_t<Scalar> beta) {
  Scalar lp = policy.log_prob(y);
  Scalar lr = ref.log_prob(y);
  require_finite(lp, "policy log-probability");
  require_finite(lr, "reference log-probability");
  return beta * (lp - lr);
}

// Loss of one pair given the two log-ratios log(pi/pi_ref) for y_w and y_l.
template <typename Scalar>
Scalar compo_loss_from_log_ratios(Scalar log_ratio_w, Scalar log_ratio_l, Scalar beta) {
  require_finite(log_ratio_w, "log-ratio");
  require_finite(log_ratio_l, "log-ratio");
  return softplus(-beta * (log_ratio_w - log_ratio_l));
}

template <typename Policy, typename Scalar = typename Policy::scalar_type>
Scalar preference_margin(const Policy& policy, const Policy& ref, const PreferenceExample& ex,
                         std::type_identity_t<Scalar> beta) {
  return implied_reward(policy, ref, ex.chosen, beta) - implied_reward(policy, ref, ex.rejected, beta);
}

// Mean of -log sigmoid(margin) over the batch.
template <typename Policy, typename Scalar = typename Policy::scalar_type>
Scalar compo_loss(const Policy& policy, const Policy& ref, std::span<const PreferenceExample> batch,
                  std::type_identity_t<Scalar> beta) {
  if (!(beta > Scalar(0))) throw std::invalid_argument("beta must be positive");
  if (batch.empty()) throw std::invalid_argument("empty preference batch");
  Scalar total(0);
  for (const auto& ex : batch) total += softplus(-preference_margin(policy, ref, ex, beta));
  return total / static_cast<Scalar>(batch.size());
}

namespace detail {

// d log pi(trace) / d logits, accumulated into `grad` with weight `scale`.
template <typename Scalar>
void accumulate_log_prob_grad(const TabularPolicy<Scalar>& policy, const Trace& trace, Scalar scale,
                              Matrix<Scalar>& grad) {
  if (trace.empty()) return;
  if (policy.scoring() == SequenceScoring::LengthNormalized) scale /= static_cast<Scalar>(trace.size());
  for (const auto& s : trace) {
    grad.row(s.row) -= scale * policy.distribution(s.row).transpose();
    grad(s.row, s.col) += scale;
  }
}

}  // namespace detail

// Analytic gradient of compo_loss with respect to policy.logits().
template <typename Scalar>
Matrix<Scalar> compo_grad(const TabularPolicy<Scalar>& policy, const TabularPolicy<Scalar>& ref,
                          std::span<const PreferenceExample> batch, std::type_identity_t<Scalar> beta) {
  if (!(beta > Scalar(0))) throw std::invalid_argument("beta must be positive");
  if (batch.empty()) throw std::invalid_argument("empty preference batch");
  Matrix<Scalar> grad = Matrix<Scalar>::Zero(policy.rows(), policy.cols());
  const Scalar inv_n = Scalar(1) / static_cast<Scalar>(batch.size());
  for (const auto& ex : batch) {
    const Scalar m = preference_margin(policy, ref, ex, beta);
    const Scalar coef = -beta * sigmoid(-m) * inv_n;
    detail::accumulate_log_prob_grad(policy, ex.chosen, coef, grad);
    detail::accumulate_log_prob_grad(policy, ex.rejected, Scalar(-coef), grad);
  }
  if (!grad.allFinite()) throw NonFinite("non-finite gradient");
  return grad;
}

// pi*(y|x) proportional to pi_ref(y|x) exp(r(x,y)/beta), normalized by exact
// summation in log space.
template <typename Derived, typename Derived2>
Vector<typename Derived::Scalar> closed_form_policy(const Eigen::MatrixBase<Derived>& ref_probs,
                                                    const Eigen::MatrixBase<Derived2>& reward,
                                                    typename Derived::Scalar beta) {
  using Scalar = typename Derived::Scalar;
  if (!(beta > Scalar(0))) throw std::invalid_argument("beta must be positive");
  if (ref_probs.size() != reward.size() || ref_probs.size() == 0) {
    throw std::invalid_argument("reference distribution and reward must have the same nonzero length");
  }
  if (!reward.allFinite()) throw NonFinite("non-finite reward");
  Vector<Scalar> log_unnorm(ref_probs.size());
  for (Index i = 0; i < ref_probs.size(); ++i) {
    log_unnorm(i) = ref_probs(i) > Scalar(0) ? std::log(ref_probs(i)) + reward(i) / beta
                                             : -std::numeric_limits<Scalar>::infinity();
  }
  const Scalar log_z = logsumexp(log_unnorm);
  if (!std::isfinite(static_cast<double>(log_z))) throw NonFinite("partition function is not finite");
  Vector<Scalar> out(ref_probs.size());
  // Scalar exp keeps zero-support entries exactly zero; vectorized exp clamps.
  for (Index i = 0; i < out.size(); ++i) out(i) = std::exp(log_unnorm(i) - log_z);
  return out;
}

// E_{y~pi}[r] - beta * KL(pi || pi_ref) by exact summation. Throws
// std::domain_error when pi puts mass where pi_ref has none.
template <typename D1, typename D2, typename D3>
typename D1::Scalar kl_objective(const Eigen::MatrixBase<D1>& probs, const Eigen::MatrixBase<D2>& ref_probs,
                                 const Eigen::MatrixBase<D3>& reward, typename D1::Scalar beta) {
  using Scalar = typename D1::Scalar;
  if (probs.size() != ref_probs.size() || probs.size() != reward.size()) {
    throw std::invalid_argument("distribution, reference and reward lengths differ");
  }
  Scalar expected(0);
  Scalar kl(0);
  for (Index i = 0; i < probs.size(); ++i) {
    if (probs(i) <= Scalar(0)) continue;
    if (ref_probs(i) <= Scalar(0)) throw std::domain_error("KL undefined: policy has mass outside reference support");
    expected += probs(i) * reward(i);
    kl += probs(i) * std::log(probs(i) / ref_probs(i));
  }
  return expected - beta * kl;
}

struct ComPOConfig {
  double beta = 0.1;
  double learning_rate = 0.1;
  int batch_size = 4;
  int steps = 200;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(beta > 0.0) || !std::isfinite(beta)) throw std::invalid_argument("beta must be > 0");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw std::invalid_argument("learning_rate must be > 0");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (steps < 0) throw std::invalid_argument("steps must be >= 0");
  }
};

template <typename Scalar>
class Optimizer {
 public:
  virtual ~Optimizer() = default;
  virtual void step(Matrix<Scalar>& params, const Matrix<Scalar>& grad) = 0;
};

template <typename Scalar>
class GradientDescent : public Optimizer<Scalar> {
 public:
  explicit GradientDescent(Scalar lr) : lr_(lr) {}
  void step(Matrix<Scalar>& params, const Matrix<Scalar>& grad) override { params.noalias() -= lr_ * grad; }

 private:
  Scalar lr_;
};

// Decoupled weight decay (Loshchilov & Hutter).
template <typename Scalar>
class AdamW : public Optimizer<Scalar> {
 public:
  explicit AdamW(Scalar lr, Scalar beta1 = Scalar(0.9), Scalar beta2 = Scalar(0.999), Scalar eps = Scalar(1e-8),
                 Scalar weight_decay = Scalar(0.01))
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {}

  void step(Matrix<Scalar>& params, const Matrix<Scalar>& grad) override {
    if (m_.size() == 0) {
      m_ = Matrix<Scalar>::Zero(params.rows(), params.cols());
      v_ = Matrix<Scalar>::Zero(params.rows(), params.cols());
    }
    ++t_;
    m_ = beta1_ * m_ + (Scalar(1) - beta1_) * grad;
    v_ = beta2_ * v_ + (Scalar(1) - beta2_) * grad.cwiseProduct(grad);
    const Scalar bc1 = Scalar(1) - std::pow(beta1_, Scalar(t_));
    const Scalar bc2 = Scalar(1) - std::pow(beta2_, Scalar(t_));
    params *= Scalar(1) - lr_ * weight_decay_;
    params.array() -= lr_ * (m_.array() / bc1) / ((v_.array() / bc2).sqrt() + eps_);
  }

 private:
  Scalar lr_, beta1_, beta2_, eps_, weight_decay_;
  Matrix<Scalar> m_, v_;
  long t_ = 0;
};

template <typename Scalar>
struct TraceRecord {
  int step = 0;
  Scalar loss{};
  Scalar mean_margin{};
};

template <typename Scalar>
struct TrainResult {
  TabularPolicy<Scalar> policy;
  TabularPolicy<Scalar> reference;
  std::vector<TraceRecord<Scalar>> trace;  // entry 0 is the initial state
};

// Fisher-Yates over mt19937_64 raw draws, so orders are identical on every
// standard library.
void shuffle_indices(std::vector<std::size_t>& idx, std::uint64_t& state);

template <typename Scalar>
std::pair<Scalar, Scalar> dataset_loss_and_margin(const TabularPolicy<Scalar>& policy, const TabularPolicy<Scalar>& ref,
                                                  std::span<const PreferenceExample> data,
                                                  std::type_identity_t<Scalar> beta) {
  Scalar loss(0);
  Scalar margin(0);
  for (const auto& ex : data) {
    Scalar m = preference_margin(policy, ref, ex, beta);
    loss += softplus(-m);
    margin += m;
  }
  const Scalar n = static_cast<Scalar>(data.size());
  return {loss / n, margin / n};
}

// Mini-batch descent on the ComPO loss against a frozen copy of `initial`.
// Each step consumes one batch of a seeded per-epoch shuffle; the trace
// records the full-dataset loss and mean margin after every step.
template <typename Scalar>
TrainResult<Scalar> train(const TabularPolicy<Scalar>& initial, std::span<const PreferenceExample> data,
                          const ComPOConfig& config, Optimizer<Scalar>* optimizer = nullptr) {
  config.validate();
  if (data.empty()) throw std::invalid_argument("cannot train on an empty preference dataset");
  GradientDescent<Scalar> default_opt(static_cast<Scalar>(config.learning_rate));
  Optimizer<Scalar>& opt = optimizer ? *optimizer : default_opt;
  const auto beta = static_cast<Scalar>(config.beta);

  TrainResult<Scalar> result{initial, initial, {}};
  result.trace.reserve(static_cast<std::size_t>(config.steps) + 1);
  auto record = [&](int step) {
    auto [loss, margin] = dataset_loss_and_margin(result.policy, result.reference, data, beta);
    if (!std::isfinite(static_cast<double>(loss))) throw NonFinite("non-finite loss", step);
    result.trace.push_back({step, loss, margin});
  };
  record(0);

  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::uint64_t rng_state = config.seed;
  std::size_t cursor = order.size();
  std::vector<PreferenceExample> batch;
  for (int step = 1; step <= config.steps; ++step) {
    batch.clear();
    while (batch.size() < static_cast<std::size_t>(config.batch_size) && batch.size() < data.size()) {
      if (cursor == order.size()) {
        shuffle_indices(order, rng_state);
        cursor = 0;
      }
      batch.push_back(data[order[cursor++]]);
    }
    Matrix<Scalar> grad;
    try {
      grad = compo_grad(result.policy, result.reference, std::span<const PreferenceExample>(batch), beta);
    } catch (const NonFinite& e) {
      throw NonFinite(e.what(), step);
    }
    opt.step(result.policy.logits(), grad);
    if (!result.policy.logits().allFinite()) throw NonFinite("non-finite logits", step);
    record(step);
  }
  return result;
}

}  // namespace claw::compo

#pragma once

// GMM-prior variational autoencoder with an injectivity-constrained decoder.

#include "covae/diff/tensor.hpp"
#include "covae/rng.hpp"
#include "covae/scm.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace covae::model {

using diff::RowMatrix;
using diff::Tensor;

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

// Fully connected stack; LeakyReLU after every layer except the last.
// weights[l] is dims[l] x dims[l+1] (applied as h W + b).
struct Mlp {
  std::vector<std::size_t> dims;
  std::vector<Tensor> weights;
  std::vector<Tensor> biases;
  double slope = 0.2;

  static Mlp create(std::vector<std::size_t> dims, double slope, Rng& rng) {
    if (dims.size() < 2) throw std::invalid_argument("Mlp needs at least one layer");
    Mlp m;
    m.dims = std::move(dims);
    m.slope = slope;
    for (std::size_t l = 0; l + 1 < m.dims.size(); ++l) {
      const std::size_t in = m.dims[l], out = m.dims[l + 1];
      const double bound = 1.0 / std::sqrt(static_cast<double>(in));
      std::uniform_real_distribution<double> u(-bound, bound);
      std::vector<double> w(in * out), b(out);
      for (double& x : w) x = u(rng);
      for (double& x : b) x = u(rng);
      m.weights.push_back(Tensor::parameter(in, out, std::move(w)));
      m.biases.push_back(Tensor::parameter(1, out, std::move(b)));
    }
    return m;
  }

  std::size_t layers() const { return weights.size(); }

  Tensor forward(const Tensor& x) const {
    Tensor h = x;
    for (std::size_t l = 0; l < weights.size(); ++l) {
      h = diff::add(diff::matmul(h, weights[l]), biases[l]);
      if (l + 1 < weights.size()) h = diff::leaky_relu(h, slope);
    }
    return h;
  }

  // Weight matrices oriented output x input (rows >= columns for a
  // non-decreasing stack).
  std::vector<RowMatrix> weight_matrices() const {
    std::vector<RowMatrix> out;
    for (const auto& w : weights) out.emplace_back(w.matrix().transpose());
    return out;
  }
};

struct GmmPrior {
  std::size_t components = 1;
  std::size_t dim = 0;
  Tensor logits;    // 1 x J
  Tensor means;     // J x d
  Tensor log_vars;  // J x d
  bool trainable = true;

  static GmmPrior create(std::size_t J, std::size_t d, bool trainable, Rng& rng) {
    if (J == 0) throw std::invalid_argument("GMM prior needs at least one component");
    GmmPrior p;
    p.components = J;
    p.dim = d;
    p.trainable = trainable;
    std::vector<double> mu(J * d, 0.0);
    if (trainable) {
      std::normal_distribution<double> n(0.0, 0.5);
      for (double& x : mu) x = n(rng);
    }
    auto make = [trainable](std::size_t r, std::size_t c, std::vector<double> v) {
      return trainable ? Tensor::parameter(r, c, std::move(v)) : Tensor::constant(r, c, std::move(v));
    };
    p.logits = make(1, J, std::vector<double>(J, 0.0));
    p.means = make(J, d, std::move(mu));
    p.log_vars = make(J, d, std::vector<double>(J * d, 0.0));
    return p;
  }

  Tensor log_weights() const { return diff::log_softmax(logits, 1); }

  // B x J matrix of log pi_j + log N(z_b; mu_j, diag(exp(log_var_j))).
  Tensor joint_log_density(const Tensor& z) const {
    using namespace diff;
    if (z.cols() != dim) throw ShapeError("GMM prior: latent dimension mismatch");
    const Tensor inv_var = exp(neg(log_vars));                                  // J x d
    const Tensor quad = matmul(square(z), transpose(inv_var));                  // B x J
    const Tensor cross = matmul(z, transpose(mul(means, inv_var)));             // B x J
    const Tensor mu_term = transpose(reduce_sum(mul(square(means), inv_var), 1)); // 1 x J
    const Tensor logdet = transpose(reduce_sum(log_vars, 1));                  // 1 x J
    const Tensor maha = add(sub(quad, scale(cross, 2.0)), mu_term);
    const Tensor log_n =
        scale(add_scalar(add(maha, logdet), static_cast<double>(dim) * kLog2Pi), -0.5);
    return add(log_n, log_weights());
  }
};

struct ModelConfig {
  std::size_t obs_dim = 0;
  std::size_t latent_dim = 0;
  std::size_t layers = 3;
  std::size_t components = 10;
  double slope = 0.2;
  double alpha = 1.0;
  double beta = 1.0;
  bool learn_prior = true;
  bool learn_obs_noise = true;
  double init_log_obs_std = 0.0;
  std::uint64_t seed = 0;
};

struct Encoded {
  Tensor mean;     // B x d
  Tensor log_var;  // B x d
  Tensor z;        // B x d, mean + exp(log_var / 2) o eps
};

struct ElboTerms {
  Tensor reconstruction;  // mean over the batch of -log P(x|z)
  Tensor kl_z;            // mean of log Q(z|x) - log P(z)
  Tensor kl_u;            // mean of KL(Q(u|x) || P(u|z))
  Tensor total;           // reconstruction + beta (kl_z + kl_u)
  Tensor z;               // first reparameterized sample, B x d
  Tensor mean;            // posterior means, B x d
  Tensor log_resp;        // B x J, log Q(u|x)
};

class CovaeModel {
 public:
  CovaeModel() = default;

  explicit CovaeModel(const ModelConfig& cfg) : cfg_(cfg) {
    if (cfg.latent_dim == 0 || cfg.obs_dim < cfg.latent_dim) {
      throw std::invalid_argument("model needs 0 < latent_dim <= obs_dim");
    }
    if (cfg.alpha < 0.0 || cfg.beta < 0.0) throw std::invalid_argument("alpha and beta must be non-negative");
    if (!(cfg.slope > 0.0 && cfg.slope < 1.0)) throw std::invalid_argument("LeakyReLU slope must lie in (0, 1)");
    Rng rng = make_stream(cfg.seed, "init");
    encoder_ = Mlp::create(scm::interpolate_dims(cfg.obs_dim, 2 * cfg.latent_dim, cfg.layers), cfg.slope, rng);
    decoder_ = Mlp::create(scm::interpolate_dims(cfg.latent_dim, cfg.obs_dim, cfg.layers), cfg.slope, rng);
    check_decoder_monotone(decoder_.dims);
    prior_ = GmmPrior::create(cfg.components, cfg.latent_dim, cfg.learn_prior, rng);
    log_obs_std_ = cfg.learn_obs_noise ? Tensor::parameter(1, 1, {cfg.init_log_obs_std})
                                       : Tensor::constant(1, 1, {cfg.init_log_obs_std});
  }

  static void check_decoder_monotone(const std::vector<std::size_t>& dims) {
    for (std::size_t l = 0; l + 1 < dims.size(); ++l)
      if (dims[l + 1] < dims[l]) throw std::invalid_argument("decoder widths must be non-decreasing");
  }

  const ModelConfig& config() const { return cfg_; }
  const Mlp& encoder() const { return encoder_; }
  const Mlp& decoder() const { return decoder_; }
  const GmmPrior& prior() const { return prior_; }
  const Tensor& log_obs_std() const { return log_obs_std_; }

  // Trainable tensors in checkpoint order: encoder (W, b per layer), decoder
  // (W, b per layer), prior logits, means, log-variances, log sigma_x. Frozen
  // tensors are included in `all_tensors` but not here.
  std::vector<Tensor> parameters() const {
    std::vector<Tensor> out;
    for (const auto& t : all_tensors())
      if (t.requires_grad()) out.push_back(t);
    return out;
  }

  std::vector<Tensor> all_tensors() const {
    std::vector<Tensor> out;
    for (const Mlp* m : {&encoder_, &decoder_})
      for (std::size_t l = 0; l < m->layers(); ++l) {
        out.push_back(m->weights[l]);
        out.push_back(m->biases[l]);
      }
    out.push_back(prior_.logits);
    out.push_back(prior_.means);
    out.push_back(prior_.log_vars);
    out.push_back(log_obs_std_);
    return out;
  }

  std::vector<std::string> tensor_names() const {
    std::vector<std::string> names;
    for (const char* which : {"encoder", "decoder"}) {
      const Mlp& m = std::string(which) == "encoder" ? encoder_ : decoder_;
      for (std::size_t l = 0; l < m.layers(); ++l) {
        names.push_back(std::string(which) + "." + std::to_string(l) + ".weight");
        names.push_back(std::string(which) + "." + std::to_string(l) + ".bias");
      }
    }
    for (const char* n : {"prior.logits", "prior.means", "prior.log_vars", "log_obs_std"}) names.emplace_back(n);
    return names;
  }

  Encoded encode(const Tensor& x, const Tensor& eps) const {
    using namespace diff;
    const std::size_t d = cfg_.latent_dim;
    if (x.cols() != cfg_.obs_dim) throw ShapeError("encode: expected " + std::to_string(cfg_.obs_dim) + " columns");
    if (eps.rows() != x.rows() || eps.cols() != d) throw ShapeError("encode: noise shape mismatch");
    const Tensor out = encoder_.forward(x);
    Encoded e;
    e.mean = slice_cols(out, 0, d);
    e.log_var = slice_cols(out, d, 2 * d);
    e.z = add(e.mean, mul(exp(scale(e.log_var, 0.5)), eps));
    return e;
  }

  Tensor decode(const Tensor& z) const {
    if (z.cols() != cfg_.latent_dim) throw ShapeError("decode: latent dimension mismatch");
    return decoder_.forward(z);
  }

  // Q(u|x) from S samples: log-normalized mean over samples of log P(u|z_s).
  Tensor log_responsibilities(const std::vector<Tensor>& zs) const {
    Tensor acc;
    for (const auto& z : zs) {
      const Tensor lp = log_posterior_u(z);
      acc = acc.defined() ? diff::add(acc, lp) : lp;
    }
    return diff::log_softmax(diff::scale(acc, 1.0 / static_cast<double>(zs.size())), 1);
  }

  Tensor responsibilities(const Tensor& z) const { return diff::exp(log_responsibilities({z})); }

  // B x J, log P(u|z) under the prior.
  Tensor log_posterior_u(const Tensor& z) const {
    const Tensor joint = prior_.joint_log_density(z);
    return diff::sub(joint, diff::logsumexp(joint, 1));
  }

  // B x 1, log P(z) of the mixture.
  Tensor log_prior(const Tensor& z) const { return diff::logsumexp(prior_.joint_log_density(z), 1); }

  // Monte Carlo negative ELBO with one z sample per entry of `eps`.
  ElboTerms elbo(const Tensor& x, const std::vector<Tensor>& eps) const {
    using namespace diff;
    if (eps.empty()) throw std::invalid_argument("elbo: need at least one noise sample");
    const Tensor enc_out = encoder_.forward(x);
    const std::size_t d = cfg_.latent_dim;
    const Tensor mean = slice_cols(enc_out, 0, d);
    const Tensor log_var = slice_cols(enc_out, d, 2 * d);
    const Tensor std_dev = exp(scale(log_var, 0.5));
    const double S = static_cast<double>(eps.size());
    const double B = static_cast<double>(x.rows());

    std::vector<Tensor> zs;
    for (const auto& e : eps) zs.push_back(add(mean, mul(std_dev, e)));

    const Tensor inv_obs_var = exp(scale(log_obs_std_, -2.0));
    const Tensor obs_const = add_scalar(scale(log_obs_std_, 2.0 * static_cast<double>(cfg_.obs_dim)),
                                        static_cast<double>(cfg_.obs_dim) * kLog2Pi);
    const Tensor sum_log_var = reduce_sum(log_var);

    Tensor rec, klz, klu;
    const Tensor log_q_u = log_responsibilities(zs);
    const Tensor q_u = exp(log_q_u);
    auto accumulate = [](Tensor& acc, const Tensor& v) { acc = acc.defined() ? add(acc, v) : v; };
    for (std::size_t s = 0; s < zs.size(); ++s) {
      const Tensor resid = sub(x, decode(zs[s]));
      // 0.5 * sum_b [ |x - x_hat|^2 / sigma^2 + o log(2 pi sigma^2) ]
      accumulate(rec, scale(add(mul(reduce_sum(square(resid)), inv_obs_var), scale(obs_const, B)), 0.5));
      // log Q(z|x) = -0.5 sum (eps^2 + log_var + log 2 pi)
      const double eps_sq = [&] {
        double a = 0.0;
        for (double v : eps[s].data()) a += v * v;
        return a;
      }();
      const Tensor log_q_z =
          scale(add_scalar(sum_log_var, eps_sq + B * static_cast<double>(d) * kLog2Pi), -0.5);
      accumulate(klz, sub(log_q_z, reduce_sum(log_prior(zs[s]))));
      accumulate(klu, reduce_sum(mul(q_u, sub(log_q_u, log_posterior_u(zs[s])))));
    }
    const double norm = 1.0 / (S * B);
    ElboTerms t;
    t.reconstruction = scale(rec, norm);
    t.kl_z = scale(klz, norm);
    t.kl_u = scale(klu, norm);
    t.total = add(t.reconstruction, scale(add(t.kl_z, t.kl_u), cfg_.beta));
    t.z = zs.front();
    t.mean = mean;
    t.log_resp = log_q_u;
    return t;
  }

  // Posterior means for a full design matrix, evaluated in chunks.
  RowMatrix latents(const RowMatrix& x) const {
    const Tensor out = encoder_.forward(Tensor::from_matrix(x));
    return out.matrix().leftCols(static_cast<Eigen::Index>(cfg_.latent_dim));
  }

  RowMatrix reconstruct(const RowMatrix& x) const {
    const RowMatrix z = latents(x);
    return decode(Tensor::from_matrix(z)).matrix();
  }

 private:
  ModelConfig cfg_;
  Mlp encoder_;
  Mlp decoder_;
  GmmPrior prior_;
  Tensor log_obs_std_;
};

}  // namespace covae::model

#pragma once

// Character-level seq2seq trained from scratch: one tanh-RNN encoder, one
// tanh-RNN decoder conditioned on the mean encoder state, tied input
// embeddings and an Adam optimizer. A few thousand parameters, double
// precision, fully deterministic given its seed. This is the desk-scale
// stand-in for a pretrained encoder-decoder; the interface is identical.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include "crex/backbone.hpp"

namespace crex {

struct TinyBackboneConfig {
  int embed_dim = 16;
  int hidden_dim = 32;
  int max_input_length = 256;   // characters
  int max_output_length = 192;  // characters; must fit rationale + closing sentence
  std::uint64_t seed = 0;
};

class TinyBackbone : public Backbone {
 public:
  explicit TinyBackbone(const TinyBackboneConfig& cfg = {}) : cfg_(cfg) { init_params(); }

  std::string model_id() const override {
    return "tiny-seq2seq-e" + std::to_string(cfg_.embed_dim) + "-h" +
           std::to_string(cfg_.hidden_dim);
  }
  int feature_dim() const override { return cfg_.hidden_dim; }
  int max_input_length() const override { return cfg_.max_input_length; }
  int max_output_length() const override { return cfg_.max_output_length; }

  void set_training(bool on) override { training_ = on; }
  bool training() const override { return training_; }

  // ------------------------------------------------------------------
  // Inference
  // ------------------------------------------------------------------

  FeatureMatrix encode_features(const std::vector<std::string>& texts) override {
    if (texts.empty()) throw Error("encode_features: empty text list");
    FeatureMatrix out(static_cast<Eigen::Index>(texts.size()), cfg_.hidden_dim);
    std::vector<Eigen::RowVectorXd> states;
    for (std::size_t i = 0; i < texts.size(); ++i) {
      const auto ids = encode_text(texts[i], cfg_.max_input_length);
      if (ids.empty()) throw Error("encode_features: empty text");
      out.row(static_cast<Eigen::Index>(i)) = run_encoder(ids, states);
    }
    return out;
  }

  std::vector<std::string> generate(const std::vector<std::string>& inputs) override {
    if (training_) throw Error("generate requires inference mode");
    std::vector<std::string> out;
    out.reserve(inputs.size());
    std::vector<Eigen::RowVectorXd> states;
    for (const auto& input : inputs) {
      const auto ids = encode_text(input, cfg_.max_input_length);
      if (ids.empty()) throw Error("generate: empty input");
      const Eigen::RowVectorXd c = run_encoder(ids, states);
      Eigen::RowVectorXd s_prev = c;
      int tok = kBos;
      std::string text;
      for (int step = 0; step < cfg_.max_output_length; ++step) {
        const Eigen::RowVectorXd s =
            (emb_.row(tok) * wys_ + s_prev * wss_ + c * wcs_ + bs_).array().tanh().matrix();
        const Eigen::RowVectorXd z = s * wout_ + bout_;
        int next = 0;
        z.maxCoeff(&next);  // ties resolve to the lowest index
        if (next == kEos) break;
        text.push_back(id_to_char(next));
        s_prev = s;
        tok = next;
      }
      out.push_back(std::move(text));
    }
    return out;
  }

  // ------------------------------------------------------------------
  // Training
  // ------------------------------------------------------------------

  std::vector<double> training_step(const SeqBatch& batch, double weight = 1.0) override {
    if (!training_) throw Error("training_step requires training mode");
    validate_batch(batch);
    const double f = weight / static_cast<double>(batch.inputs.size());
    std::vector<double> losses;
    losses.reserve(batch.inputs.size());
    for (std::size_t i = 0; i < batch.inputs.size(); ++i)
      losses.push_back(forward_backward(batch.inputs[i], batch.targets[i], f));
    return losses;
  }

  void optimizer_step(double learning_rate) override {
    ++adam_step_;
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double corr1 = 1.0 - std::pow(b1, adam_step_);
    const double corr2 = 1.0 - std::pow(b2, adam_step_);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& m = adam_m_[i];
      auto& v = adam_v_[i];
      const auto& g = *grads_[i];
      m = b1 * m + (1.0 - b1) * g;              // coefficient-wise, alias-safe
      v = b2 * v + (1.0 - b2) * g.cwiseProduct(g);
      params_[i]->array() -=
          learning_rate * (m.array() / corr1) / ((v.array() / corr2).sqrt() + eps);
    }
    zero_grad();
  }

  void zero_grad() override {
    for (auto* g : grads_) g->setZero();
  }

  // ------------------------------------------------------------------
  // Parameter access (checkpointing, gradient checks)
  // ------------------------------------------------------------------

  std::size_t num_parameters() const {
    std::size_t n = 0;
    for (const auto* p : params_) n += static_cast<std::size_t>(p->size());
    return n;
  }

  double parameter(std::size_t flat) const {
    auto [tensor, offset] = locate(flat);
    return params_[tensor]->data()[offset];
  }

  void set_parameter(std::size_t flat, double value) {
    auto [tensor, offset] = locate(flat);
    params_[tensor]->data()[offset] = value;
  }

  double gradient(std::size_t flat) const {
    auto [tensor, offset] = locate(flat);
    return grads_[tensor]->data()[offset];
  }

  void save(const std::filesystem::path& dir) const override {
    std::filesystem::create_directories(dir);
    std::ofstream out(dir / "params.bin", std::ios::binary);
    if (!out) throw Error("cannot write checkpoint: " + (dir / "params.bin").string());
    const char magic[8] = {'C', 'R', 'E', 'X', 'T', 'B', '0', '1'};
    out.write(magic, 8);
    const std::int32_t dims[4] = {kVocab, cfg_.embed_dim, cfg_.hidden_dim,
                                  cfg_.max_input_length};
    out.write(reinterpret_cast<const char*>(dims), sizeof(dims));
    for (const auto* p : params_)
      out.write(reinterpret_cast<const char*>(p->data()),
                static_cast<std::streamsize>(sizeof(double) * p->size()));
    if (!out) throw Error("short checkpoint write");
    write_backbone_manifest(dir, *this, "tiny");
  }

  void load(const std::filesystem::path& dir) override {
    std::ifstream in(dir / "params.bin", std::ios::binary);
    if (!in) throw Error("cannot read checkpoint: " + (dir / "params.bin").string());
    char magic[8];
    in.read(magic, 8);
    if (std::memcmp(magic, "CREXTB01", 8) != 0) throw Error("bad checkpoint magic");
    std::int32_t dims[4];
    in.read(reinterpret_cast<char*>(dims), sizeof(dims));
    if (dims[0] != kVocab || dims[1] != cfg_.embed_dim || dims[2] != cfg_.hidden_dim)
      throw Error("checkpoint dimensions do not match this model");
    for (auto* p : params_)
      in.read(reinterpret_cast<char*>(p->data()),
              static_cast<std::streamsize>(sizeof(double) * p->size()));
    if (!in) throw Error("short checkpoint read");
  }

  // Character tokenizer, exposed for tests.
  static constexpr int kPad = 0, kBos = 1, kEos = 2, kUnk = 3;
  static constexpr int kVocab = 4 + 95;  // printable ASCII 32..126

  static int char_to_id(char c) {
    const unsigned char u = static_cast<unsigned char>(c);
    return (u >= 32 && u <= 126) ? static_cast<int>(u) - 32 + 4 : kUnk;
  }
  static char id_to_char(int id) {
    return (id >= 4 && id < kVocab) ? static_cast<char>(id - 4 + 32) : '?';
  }

 private:
  // ------------------------------------------------------------------
  // Model math
  // ------------------------------------------------------------------

  std::vector<int> encode_text(const std::string& text, int limit) {
    std::vector<int> ids;
    ids.reserve(std::min<std::size_t>(text.size(), static_cast<std::size_t>(limit)));
    for (char c : text) {
      if (static_cast<int>(ids.size()) >= limit) {
        if (!warned_truncation_) {
          std::cerr << "crex: warning: input longer than " << limit
                    << " characters truncated (further truncations are silent)\n";
          warned_truncation_ = true;
        }
        break;
      }
      ids.push_back(char_to_id(c));
    }
    return ids;
  }

  // Runs the encoder, returns the mean state; per-step states land in
  // `states` for backprop.
  Eigen::RowVectorXd run_encoder(const std::vector<int>& ids,
                                 std::vector<Eigen::RowVectorXd>& states) const {
    states.clear();
    states.reserve(ids.size());
    Eigen::RowVectorXd h = Eigen::RowVectorXd::Zero(cfg_.hidden_dim);
    Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(cfg_.hidden_dim);
    for (int id : ids) {
      h = (emb_.row(id) * wxh_ + h * whh_ + bh_).array().tanh().matrix();
      states.push_back(h);
      mean += h;
    }
    mean /= static_cast<double>(ids.size());
    return mean;
  }

  // Full forward + backward for one (input, target) pair; accumulates
  // f * dLoss/dParams and returns the per-sequence mean cross-entropy.
  double forward_backward(const std::string& input, const std::string& target, double f) {
    const std::vector<int> x = encode_text(input, cfg_.max_input_length);
    std::vector<int> y = encode_text(target, cfg_.max_output_length - 1);
    y.push_back(kEos);
    const int L = static_cast<int>(x.size());
    const int M = static_cast<int>(y.size());

    std::vector<Eigen::RowVectorXd> henc;
    const Eigen::RowVectorXd c = run_encoder(x, henc);

    // Decoder forward, keeping states and probabilities for the backward pass.
    std::vector<Eigen::RowVectorXd> sdec(static_cast<std::size_t>(M));
    Eigen::MatrixXd probs(M, kVocab);
    Eigen::RowVectorXd s_prev = c;
    double loss = 0.0;
    for (int t = 0; t < M; ++t) {
      const int tok_in = (t == 0) ? kBos : y[static_cast<std::size_t>(t - 1)];
      const Eigen::RowVectorXd s =
          (emb_.row(tok_in) * wys_ + s_prev * wss_ + c * wcs_ + bs_).array().tanh().matrix();
      const Eigen::RowVectorXd z = s * wout_ + bout_;
      const double zmax = z.maxCoeff();
      const double lse = zmax + std::log((z.array() - zmax).exp().sum());
      probs.row(t) = (z.array() - lse).exp().matrix();
      loss += lse - z(y[static_cast<std::size_t>(t)]);
      sdec[static_cast<std::size_t>(t)] = s;
      s_prev = s;
    }
    loss /= M;

    // Decoder backward.
    const double ft = f / M;
    Eigen::RowVectorXd ds_next = Eigen::RowVectorXd::Zero(cfg_.hidden_dim);
    Eigen::RowVectorXd dc = Eigen::RowVectorXd::Zero(cfg_.hidden_dim);
    for (int t = M - 1; t >= 0; --t) {
      const int tok_in = (t == 0) ? kBos : y[static_cast<std::size_t>(t - 1)];
      const Eigen::RowVectorXd& s = sdec[static_cast<std::size_t>(t)];
      const Eigen::RowVectorXd& s_in = (t == 0) ? c : sdec[static_cast<std::size_t>(t - 1)];
      Eigen::RowVectorXd dz = probs.row(t) * ft;
      dz(y[static_cast<std::size_t>(t)]) -= ft;
      g_wout_.noalias() += s.transpose() * dz;
      g_bout_ += dz;
      const Eigen::RowVectorXd ds = dz * wout_.transpose() + ds_next;
      const Eigen::RowVectorXd da = (ds.array() * (1.0 - s.array().square())).matrix();
      g_wys_.noalias() += emb_.row(tok_in).transpose() * da;
      g_wss_.noalias() += s_in.transpose() * da;
      g_wcs_.noalias() += c.transpose() * da;
      g_bs_ += da;
      g_emb_.row(tok_in) += da * wys_.transpose();
      dc += da * wcs_.transpose();
      ds_next = da * wss_.transpose();
    }
    dc += ds_next;  // the decoder's initial state is c itself

    // Encoder backward: every step receives dc/L through the mean pooling.
    const Eigen::RowVectorXd dh_common = dc / static_cast<double>(L);
    Eigen::RowVectorXd dh_next = Eigen::RowVectorXd::Zero(cfg_.hidden_dim);
    for (int t = L - 1; t >= 0; --t) {
      const Eigen::RowVectorXd& h = henc[static_cast<std::size_t>(t)];
      const Eigen::RowVectorXd dh = dh_common + dh_next;
      const Eigen::RowVectorXd da = (dh.array() * (1.0 - h.array().square())).matrix();
      g_wxh_.noalias() += emb_.row(x[static_cast<std::size_t>(t)]).transpose() * da;
      if (t > 0)  // h_{-1} is zero, so it contributes nothing to whh
        g_whh_.noalias() += henc[static_cast<std::size_t>(t - 1)].transpose() * da;
      g_bh_ += da;
      g_emb_.row(x[static_cast<std::size_t>(t)]) += da * wxh_.transpose();
      dh_next = da * whh_.transpose();
    }
    return loss;
  }

  // ------------------------------------------------------------------
  // Parameter plumbing
  // ------------------------------------------------------------------

  void init_params() {
    const int E = cfg_.embed_dim, H = cfg_.hidden_dim, V = kVocab;
    emb_.resize(V, E);
    wxh_.resize(E, H);
    whh_.resize(H, H);
    bh_.resize(1, H);
    wys_.resize(E, H);
    wss_.resize(H, H);
    wcs_.resize(H, H);
    bs_.resize(1, H);
    wout_.resize(H, V);
    bout_.resize(1, V);

    params_ = {&emb_, &wxh_, &whh_, &bh_, &wys_, &wss_, &wcs_, &bs_, &wout_, &bout_};
    grads_ = {&g_emb_, &g_wxh_, &g_whh_, &g_bh_, &g_wys_,
              &g_wss_, &g_wcs_, &g_bs_, &g_wout_, &g_bout_};
    adam_m_.clear();
    adam_v_.clear();
    for (std::size_t i = 0; i < params_.size(); ++i) {
      *grads_[i] = Eigen::MatrixXd::Zero(params_[i]->rows(), params_[i]->cols());
      adam_m_.push_back(Eigen::MatrixXd::Zero(params_[i]->rows(), params_[i]->cols()));
      adam_v_.push_back(Eigen::MatrixXd::Zero(params_[i]->rows(), params_[i]->cols()));
    }

    std::mt19937_64 rng(cfg_.seed);
    for (auto* p : params_) {
      if (p->rows() == 1) {  // biases start at zero
        p->setZero();
        continue;
      }
      const double r = std::sqrt(6.0 / static_cast<double>(p->rows() + p->cols()));
      std::uniform_real_distribution<double> dist(-r, r);
      for (Eigen::Index i = 0; i < p->size(); ++i) p->data()[i] = dist(rng);
    }
  }

  std::pair<std::size_t, Eigen::Index> locate(std::size_t flat) const {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      const std::size_t n = static_cast<std::size_t>(params_[i]->size());
      if (flat < n) return {i, static_cast<Eigen::Index>(flat)};
      flat -= n;
    }
    throw Error("parameter index out of range");
  }

  TinyBackboneConfig cfg_;
  bool training_ = false;
  bool warned_truncation_ = false;

  Eigen::MatrixXd emb_, wxh_, whh_, bh_, wys_, wss_, wcs_, bs_, wout_, bout_;
  Eigen::MatrixXd g_emb_, g_wxh_, g_whh_, g_bh_, g_wys_, g_wss_, g_wcs_, g_bs_, g_wout_,
      g_bout_;
  std::vector<Eigen::MatrixXd*> params_;
  std::vector<Eigen::MatrixXd*> grads_;
  std::vector<Eigen::MatrixXd> adam_m_, adam_v_;
  long adam_step_ = 0;
};

}  // namespace crex

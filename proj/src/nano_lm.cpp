// SPDX-License-Identifier: Apache-2.0
#include "entsft/nano_lm.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <string>

#include "entsft/errors.hpp"
#include "entsft/rng.hpp"

namespace entsft {

namespace {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVec = Eigen::RowVectorXd;
using CMap = Eigen::Map<const Mat>;
using MMap = Eigen::Map<Mat>;
using CVec = Eigen::Map<const RowVec>;
using MVec = Eigen::Map<RowVec>;

constexpr double kLnEps = 1e-5;
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;

CMap mat(const Param& p) { return {p.data.data(), static_cast<Eigen::Index>(p.rows()),
                                   static_cast<Eigen::Index>(p.cols())}; }
MMap mat(Param& p) { return {p.data.data(), static_cast<Eigen::Index>(p.rows()),
                             static_cast<Eigen::Index>(p.cols())}; }
CVec vec(const Param& p) { return {p.data.data(), static_cast<Eigen::Index>(p.data.size())}; }
MVec vec(Param& p) { return {p.data.data(), static_cast<Eigen::Index>(p.data.size())}; }

struct LnCache {
    Mat xhat;
    Eigen::VectorXd rstd;
};

Mat layer_norm(const Mat& x, const CVec& g, const CVec& b, LnCache& c) {
    const auto n = x.rows();
    c.xhat.resize(n, x.cols());
    c.rstd.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double mean = x.row(i).mean();
        const RowVec centered = x.row(i).array() - mean;
        const double var = centered.squaredNorm() / static_cast<double>(x.cols());
        const double rstd = 1.0 / std::sqrt(var + kLnEps);
        c.rstd(i) = rstd;
        c.xhat.row(i) = centered * rstd;
    }
    Mat y = c.xhat.array().rowwise() * g.array();
    y.rowwise() += b;
    return y;
}

Mat layer_norm_backward(const Mat& dy, const LnCache& c, const CVec& g, MVec dg, MVec db) {
    dg += (dy.array() * c.xhat.array()).colwise().sum().matrix();
    db += dy.colwise().sum();
    const Mat dxhat = dy.array().rowwise() * g.array();
    Mat dx(dy.rows(), dy.cols());
    for (Eigen::Index i = 0; i < dy.rows(); ++i) {
        const double m1 = dxhat.row(i).mean();
        const double m2 = dxhat.row(i).dot(c.xhat.row(i)) / static_cast<double>(dy.cols());
        dx.row(i) = c.rstd(i) * (dxhat.row(i).array() - m1 - c.xhat.row(i).array() * m2).matrix();
    }
    return dx;
}

// tanh through a single exp; several times cheaper than std::tanh, with
// absolute error below 1e-15.
double tanh_exp(double x) {
    const double e = std::exp(-2.0 * std::abs(x));
    return std::copysign((1.0 - e) / (1.0 + e), x);
}

double gelu(double u) {
    return 0.5 * u * (1.0 + tanh_exp(kGeluC * (u + kGeluA * u * u * u)));
}

double gelu_grad(double u) {
    const double t = tanh_exp(kGeluC * (u + kGeluA * u * u * u));
    return 0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * u * u);
}

}  // namespace

struct ForwardCache {
    struct Layer {
        LnCache ln1;
        Mat h1;
        Mat qkv;
        std::vector<Mat> probs;  // [sequence * n_heads + head], causal T x T
        Mat att;
        LnCache ln2;
        Mat h2;
        Mat u;
        Mat a;
    };
    std::vector<std::size_t> tokens;
    std::vector<std::size_t> positions;
    std::vector<Layer> layers;
    LnCache lnf;
    Mat hf;
};

void ModelConfig::validate() const {
    if (vocab_size < 2) {
        throw ConfigError("vocab_size must be >= 2");
    }
    if (context_len < 1 || d_model < 1 || n_layers < 1 || n_heads < 1) {
        throw ConfigError("context_len, d_model, n_layers and n_heads must be positive");
    }
    if (d_model % n_heads != 0) {
        throw ConfigError("d_model must be divisible by n_heads");
    }
    if (!(init_std > 0.0)) {
        throw ConfigError("init_std must be > 0");
    }
}

NanoLM::NanoLM(ModelConfig config) : config_(config) {
    config_.validate();
    const std::size_t v = config_.vocab_size;
    const std::size_t d = config_.d_model;
    const std::size_t f = config_.ff_dim();
    ParamSet& p = prototype_;
    layout_.tok_emb = p.add("tok_emb", {v, d});
    layout_.pos_emb = p.add("pos_emb", {config_.context_len, d});
    for (std::size_t l = 0; l < config_.n_layers; ++l) {
        const std::string pre = "layers." + std::to_string(l) + ".";
        Layout::Block b{};
        b.ln1_g = p.add(pre + "ln1.g", {d}, 1.0);
        b.ln1_b = p.add(pre + "ln1.b", {d});
        b.w_qkv = p.add(pre + "attn.w_qkv", {d, 3 * d});
        b.b_qkv = p.add(pre + "attn.b_qkv", {3 * d});
        b.w_o = p.add(pre + "attn.w_o", {d, d});
        b.b_o = p.add(pre + "attn.b_o", {d});
        b.ln2_g = p.add(pre + "ln2.g", {d}, 1.0);
        b.ln2_b = p.add(pre + "ln2.b", {d});
        b.w_in = p.add(pre + "mlp.w_in", {d, f});
        b.b_in = p.add(pre + "mlp.b_in", {f});
        b.w_out = p.add(pre + "mlp.w_out", {f, d});
        b.b_out = p.add(pre + "mlp.b_out", {d});
        layout_.blocks.push_back(b);
    }
    layout_.lnf_g = p.add("ln_f.g", {d}, 1.0);
    layout_.lnf_b = p.add("ln_f.b", {d});
    if (!config_.tie_embeddings) {
        layout_.head_w = p.add("head.w", {d, v});
    }
    layout_.head_b = p.add("head.b", {v});
}

std::size_t NanoLM::expected_param_count() const noexcept {
    const std::size_t v = config_.vocab_size;
    const std::size_t d = config_.d_model;
    const std::size_t f = config_.ff_dim();
    const std::size_t per_layer = 2 * d + (3 * d * d + 3 * d) + (d * d + d) + 2 * d + (d * f + f) + (f * d + d);
    return v * d + config_.context_len * d + config_.n_layers * per_layer + 2 * d +
           (config_.tie_embeddings ? 0 : d * v) + v;
}

ParamSet NanoLM::init_params() const {
    ParamSet p = prototype_;
    Rng rng(derive_seed(config_.seed, 0x1a17));
    const double std = config_.init_std;
    const double resid_std = std / std::sqrt(2.0 * static_cast<double>(config_.n_layers));
    auto fill_normal = [&](std::size_t idx, double s) {
        for (double& x : p[idx].data) {
            x = s * rng.normal();
        }
    };
    fill_normal(layout_.tok_emb, std);
    fill_normal(layout_.pos_emb, std);
    for (const auto& b : layout_.blocks) {
        fill_normal(b.w_qkv, std);
        fill_normal(b.w_o, resid_std);
        fill_normal(b.w_in, std);
        fill_normal(b.w_out, resid_std);
    }
    if (!config_.tie_embeddings && !config_.zero_init_head) {
        fill_normal(layout_.head_w, std);
    }
    return p;
}

void NanoLM::check_params(const ParamSet& params) const {
    prototype_.require_same_layout(params, "NanoLM");
}

void NanoLM::check_batch(std::span<const Sequence> batch) const {
    for (const auto& s : batch) {
        if (s.token_ids.empty()) {
            throw DomainError("empty sequence");
        }
        if (s.token_ids.size() > config_.context_len) {
            throw DomainError("sequence of length " + std::to_string(s.token_ids.size()) +
                              " exceeds context_len " + std::to_string(config_.context_len));
        }
        for (std::size_t t : s.token_ids) {
            if (t >= config_.vocab_size) {
                throw DomainError("token id " + std::to_string(t) + " out of vocabulary");
            }
        }
    }
}

LogitBatch NanoLM::forward(const ParamSet& params, std::span<const Sequence> batch) const {
    return forward_train(params, batch).logits;
}

ForwardPass NanoLM::forward_train(const ParamSet& params, std::span<const Sequence> batch) const {
    check_params(params);
    check_batch(batch);
    const auto d = static_cast<Eigen::Index>(config_.d_model);
    const auto n_heads = static_cast<Eigen::Index>(config_.n_heads);
    const Eigen::Index hd = d / n_heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

    ForwardPass pass;
    auto cache = std::make_shared<ForwardCache>();
    std::size_t n = 0;
    for (const auto& s : batch) {
        pass.offsets.push_back(n);
        pass.lengths.push_back(s.token_ids.size());
        for (std::size_t t = 0; t < s.token_ids.size(); ++t) {
            cache->tokens.push_back(s.token_ids[t]);
            cache->positions.push_back(t);
        }
        n += s.token_ids.size();
    }
    const auto rows = static_cast<Eigen::Index>(n);

    const CMap tok = mat(params[layout_.tok_emb]);
    const CMap pos = mat(params[layout_.pos_emb]);
    Mat x(rows, d);
    for (Eigen::Index r = 0; r < rows; ++r) {
        x.row(r) = tok.row(static_cast<Eigen::Index>(cache->tokens[r])) +
                   pos.row(static_cast<Eigen::Index>(cache->positions[r]));
    }

    cache->layers.resize(layout_.blocks.size());
    for (std::size_t l = 0; l < layout_.blocks.size(); ++l) {
        const auto& b = layout_.blocks[l];
        auto& lc = cache->layers[l];
        lc.h1 = layer_norm(x, vec(params[b.ln1_g]), vec(params[b.ln1_b]), lc.ln1);
        lc.qkv = lc.h1 * mat(params[b.w_qkv]);
        lc.qkv.rowwise() += vec(params[b.b_qkv]);

        lc.att = Mat::Zero(rows, d);
        lc.probs.resize(batch.size() * config_.n_heads);
        for (std::size_t s = 0; s < batch.size(); ++s) {
            const auto o = static_cast<Eigen::Index>(pass.offsets[s]);
            const auto len = static_cast<Eigen::Index>(pass.lengths[s]);
            for (Eigen::Index h = 0; h < n_heads; ++h) {
                const auto q = lc.qkv.block(o, h * hd, len, hd);
                const auto k = lc.qkv.block(o, d + h * hd, len, hd);
                const auto v = lc.qkv.block(o, 2 * d + h * hd, len, hd);
                Mat prob = (q * k.transpose()) * scale;
                for (Eigen::Index i = 0; i < len; ++i) {
                    const double m = prob.row(i).head(i + 1).maxCoeff();
                    double sum = 0.0;
                    for (Eigen::Index j = 0; j <= i; ++j) {
                        prob(i, j) = std::exp(prob(i, j) - m);
                        sum += prob(i, j);
                    }
                    prob.row(i).head(i + 1) /= sum;
                    prob.row(i).tail(len - i - 1).setZero();
                }
                lc.att.block(o, h * hd, len, hd).noalias() = prob * v;
                lc.probs[s * config_.n_heads + static_cast<std::size_t>(h)] = std::move(prob);
            }
        }
        Mat attn_out = lc.att * mat(params[b.w_o]);
        attn_out.rowwise() += vec(params[b.b_o]);
        x += attn_out;

        lc.h2 = layer_norm(x, vec(params[b.ln2_g]), vec(params[b.ln2_b]), lc.ln2);
        lc.u = lc.h2 * mat(params[b.w_in]);
        lc.u.rowwise() += vec(params[b.b_in]);
        lc.a = lc.u.unaryExpr([](double u) { return gelu(u); });
        Mat mlp_out = lc.a * mat(params[b.w_out]);
        mlp_out.rowwise() += vec(params[b.b_out]);
        x += mlp_out;
    }

    cache->hf = layer_norm(x, vec(params[layout_.lnf_g]), vec(params[layout_.lnf_b]), cache->lnf);
    Mat logits = config_.tie_embeddings ? Mat(cache->hf * tok.transpose())
                                        : Mat(cache->hf * mat(params[layout_.head_w]));
    logits.rowwise() += vec(params[layout_.head_b]);

    pass.logits = LogitBatch(n, config_.vocab_size,
                             std::vector<double>(logits.data(), logits.data() + logits.size()));
    pass.cache = std::move(cache);
    return pass;
}

ParamSet NanoLM::backward(const ParamSet& params, std::span<const Sequence> batch,
                          const LogitBatch& upstream) const {
    return backward(params, forward_train(params, batch), upstream);
}

ParamSet NanoLM::backward(const ParamSet& params, const ForwardPass& pass,
                          const LogitBatch& upstream) const {
    check_params(params);
    if (upstream.rows() != pass.logits.rows() || upstream.vocab() != pass.logits.vocab()) {
        throw DomainError("upstream gradient shape does not match logits");
    }
    for (double g : upstream.data()) {
        if (!std::isfinite(g)) {
            throw DomainError("non-finite upstream gradient");
        }
    }
    const ForwardCache& cache = *pass.cache;
    const auto d = static_cast<Eigen::Index>(config_.d_model);
    const auto n_heads = static_cast<Eigen::Index>(config_.n_heads);
    const Eigen::Index hd = d / n_heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    const auto rows = static_cast<Eigen::Index>(upstream.rows());

    ParamSet grads = prototype_.zeros_like();
    const CMap dlogits(upstream.data().data(), rows, static_cast<Eigen::Index>(upstream.vocab()));
    const CMap tok = mat(params[layout_.tok_emb]);

    vec(grads[layout_.head_b]) += dlogits.colwise().sum();
    Mat dhf;
    if (config_.tie_embeddings) {
        mat(grads[layout_.tok_emb]).noalias() += dlogits.transpose() * cache.hf;
        dhf = dlogits * tok;
    } else {
        mat(grads[layout_.head_w]).noalias() += cache.hf.transpose() * dlogits;
        dhf = dlogits * mat(params[layout_.head_w]).transpose();
    }
    Mat dx = layer_norm_backward(dhf, cache.lnf, vec(params[layout_.lnf_g]),
                                 vec(grads[layout_.lnf_g]), vec(grads[layout_.lnf_b]));

    for (std::size_t li = layout_.blocks.size(); li-- > 0;) {
        const auto& b = layout_.blocks[li];
        const auto& lc = cache.layers[li];

        // MLP residual branch.
        mat(grads[b.w_out]).noalias() += lc.a.transpose() * dx;
        vec(grads[b.b_out]) += dx.colwise().sum();
        Mat du = dx * mat(params[b.w_out]).transpose();
        du.array() *= lc.u.unaryExpr([](double u) { return gelu_grad(u); }).array();
        mat(grads[b.w_in]).noalias() += lc.h2.transpose() * du;
        vec(grads[b.b_in]) += du.colwise().sum();
        const Mat dh2 = du * mat(params[b.w_in]).transpose();
        dx += layer_norm_backward(dh2, lc.ln2, vec(params[b.ln2_g]), vec(grads[b.ln2_g]),
                                  vec(grads[b.ln2_b]));

        // Attention residual branch.
        mat(grads[b.w_o]).noalias() += lc.att.transpose() * dx;
        vec(grads[b.b_o]) += dx.colwise().sum();
        const Mat datt = dx * mat(params[b.w_o]).transpose();
        Mat dqkv = Mat::Zero(rows, 3 * d);
        for (std::size_t s = 0; s < pass.offsets.size(); ++s) {
            const auto o = static_cast<Eigen::Index>(pass.offsets[s]);
            const auto len = static_cast<Eigen::Index>(pass.lengths[s]);
            for (Eigen::Index h = 0; h < n_heads; ++h) {
                const Mat& prob = lc.probs[s * config_.n_heads + static_cast<std::size_t>(h)];
                const auto q = lc.qkv.block(o, h * hd, len, hd);
                const auto k = lc.qkv.block(o, d + h * hd, len, hd);
                const auto v = lc.qkv.block(o, 2 * d + h * hd, len, hd);
                const auto dout = datt.block(o, h * hd, len, hd);
                const Mat dprob = dout * v.transpose();
                dqkv.block(o, 2 * d + h * hd, len, hd).noalias() = prob.transpose() * dout;
                Mat dscore = prob.cwiseProduct(dprob);
                const Eigen::VectorXd row_dot = dscore.rowwise().sum();
                dscore -= prob.cwiseProduct(row_dot.replicate(1, len));
                dscore *= scale;
                dqkv.block(o, h * hd, len, hd).noalias() = dscore * k;
                dqkv.block(o, d + h * hd, len, hd).noalias() = dscore.transpose() * q;
            }
        }
        mat(grads[b.w_qkv]).noalias() += lc.h1.transpose() * dqkv;
        vec(grads[b.b_qkv]) += dqkv.colwise().sum();
        const Mat dh1 = dqkv * mat(params[b.w_qkv]).transpose();
        dx += layer_norm_backward(dh1, lc.ln1, vec(params[b.ln1_g]), vec(grads[b.ln1_g]),
                                  vec(grads[b.ln1_b]));
    }

    MMap dtok = mat(grads[layout_.tok_emb]);
    MMap dpos = mat(grads[layout_.pos_emb]);
    for (Eigen::Index r = 0; r < rows; ++r) {
        dtok.row(static_cast<Eigen::Index>(cache.tokens[r])) += dx.row(r);
        dpos.row(static_cast<Eigen::Index>(cache.positions[r])) += dx.row(r);
    }
    return grads;
}

// ---------------------------------------------------------------------------
// Incremental decoding

struct NanoLM::Session::Impl {
    const NanoLM* model = nullptr;
    const ParamSet* params = nullptr;
    std::size_t streams = 0;
    std::size_t pos = 0;
    std::vector<Mat> keys;    // per layer: [streams * context_len x d]
    std::vector<Mat> values;  // per layer
};

NanoLM::Session::Session(const NanoLM& model, const ParamSet& params, std::size_t streams)
    : impl_(std::make_unique<Impl>()) {
    model.check_params(params);
    impl_->model = &model;
    impl_->params = &params;
    impl_->streams = streams;
    const auto rows = static_cast<Eigen::Index>(streams * model.config_.context_len);
    const auto d = static_cast<Eigen::Index>(model.config_.d_model);
    for (std::size_t l = 0; l < model.config_.n_layers; ++l) {
        impl_->keys.emplace_back(rows, d);
        impl_->values.emplace_back(rows, d);
    }
}

NanoLM::Session::~Session() = default;
NanoLM::Session::Session(Session&&) noexcept = default;
NanoLM::Session& NanoLM::Session::operator=(Session&&) noexcept = default;

std::size_t NanoLM::Session::position() const noexcept { return impl_->pos; }

LogitBatch NanoLM::Session::step(std::span<const std::size_t> tokens) {
    const NanoLM& m = *impl_->model;
    const ParamSet& params = *impl_->params;
    const ModelConfig& cfg = m.config_;
    if (tokens.size() != impl_->streams) {
        throw DomainError("session step needs one token per stream");
    }
    if (impl_->pos >= cfg.context_len) {
        throw DomainError("session exceeded context_len");
    }
    const auto d = static_cast<Eigen::Index>(cfg.d_model);
    const auto n_heads = static_cast<Eigen::Index>(cfg.n_heads);
    const Eigen::Index hd = d / n_heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    const auto ns = static_cast<Eigen::Index>(impl_->streams);
    const auto p = static_cast<Eigen::Index>(impl_->pos);
    const auto ctx = static_cast<Eigen::Index>(cfg.context_len);

    const CMap tok = mat(params[m.layout_.tok_emb]);
    const CMap pos = mat(params[m.layout_.pos_emb]);
    Mat x(ns, d);
    for (Eigen::Index s = 0; s < ns; ++s) {
        const std::size_t t = tokens[static_cast<std::size_t>(s)];
        if (t >= cfg.vocab_size) {
            throw DomainError("token id " + std::to_string(t) + " out of vocabulary");
        }
        x.row(s) = tok.row(static_cast<Eigen::Index>(t)) + pos.row(p);
    }

    LnCache scratch;
    for (std::size_t l = 0; l < m.layout_.blocks.size(); ++l) {
        const auto& b = m.layout_.blocks[l];
        const Mat h1 = layer_norm(x, vec(params[b.ln1_g]), vec(params[b.ln1_b]), scratch);
        Mat qkv = h1 * mat(params[b.w_qkv]);
        qkv.rowwise() += vec(params[b.b_qkv]);
        Mat& kc = impl_->keys[l];
        Mat& vc = impl_->values[l];
        Mat att(ns, d);
        Eigen::VectorXd score(p + 1);
        for (Eigen::Index s = 0; s < ns; ++s) {
            kc.row(s * ctx + p) = qkv.row(s).segment(d, d);
            vc.row(s * ctx + p) = qkv.row(s).segment(2 * d, d);
            for (Eigen::Index h = 0; h < n_heads; ++h) {
                const auto q = qkv.row(s).segment(h * hd, hd);
                const auto k = kc.block(s * ctx, h * hd, p + 1, hd);
                const auto v = vc.block(s * ctx, h * hd, p + 1, hd);
                score.noalias() = (k * q.transpose()) * scale;
                score = (score.array() - score.maxCoeff()).exp();
                score /= score.sum();
                att.row(s).segment(h * hd, hd).noalias() = score.transpose() * v;
            }
        }
        Mat attn_out = att * mat(params[b.w_o]);
        attn_out.rowwise() += vec(params[b.b_o]);
        x += attn_out;
        const Mat h2 = layer_norm(x, vec(params[b.ln2_g]), vec(params[b.ln2_b]), scratch);
        Mat u = h2 * mat(params[b.w_in]);
        u.rowwise() += vec(params[b.b_in]);
        Mat mlp_out = u.unaryExpr([](double z) { return gelu(z); }) * mat(params[b.w_out]);
        mlp_out.rowwise() += vec(params[b.b_out]);
        x += mlp_out;
    }
    const Mat hf = layer_norm(x, vec(params[m.layout_.lnf_g]), vec(params[m.layout_.lnf_b]), scratch);
    Mat logits = cfg.tie_embeddings ? Mat(hf * tok.transpose())
                                    : Mat(hf * mat(params[m.layout_.head_w]));
    logits.rowwise() += vec(params[m.layout_.head_b]);
    ++impl_->pos;
    return LogitBatch(impl_->streams, cfg.vocab_size,
                      std::vector<double>(logits.data(), logits.data() + logits.size()));
}

}  // namespace entsft

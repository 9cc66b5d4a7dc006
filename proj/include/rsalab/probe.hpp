#pragma once

#include <array>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "rsalab/checkpoint.hpp"
#include "rsalab/grad.hpp"
#include "rsalab/rsa_fast.hpp"

namespace rsalab {

// Synthetic motion probe: moving-bar clips whose direction classes are exact
// time reversals of each other, a one-transform classifier, and the paired
// diagnostics that separate order-sensitive transforms from order-blind ones.

enum class MotionLabel : int { Up = 0, Down = 1, Left = 2, Right = 3 };

inline const char* label_name(MotionLabel l) {
    switch (l) {
        case MotionLabel::Up: return "up";
        case MotionLabel::Down: return "down";
        case MotionLabel::Left: return "left";
        case MotionLabel::Right: return "right";
    }
    return "?";
}

template <typename T>
struct Clip {
    Tensor<T> data;  // [1, T, H, W, 2]: intensity + constant bias channel
    MotionLabel label = MotionLabel::Up;
    std::size_t pair_index = 0;  // position of the reversal partner
};

template <typename T>
Tensor<T> reverse_time(const Tensor<T>& x) {
    const GridDims g = grid_of(x);
    Tensor<T> out(x.shape());
    const std::size_t frame = g.height * g.width * g.channels;
    for (std::size_t b = 0; b < g.batch; ++b)
        for (std::size_t t = 0; t < g.time; ++t) {
            const T* src = x.data() + (b * g.time + t) * frame;
            T* dst = out.data() + (b * g.time + (g.time - 1 - t)) * frame;
            std::copy(src, src + frame, dst);
        }
    return out;
}

struct DatasetConfig {
    std::size_t n_per_class = 200;
    std::size_t time = 8, height = 16, width = 16;
};

template <typename T>
struct Dataset {
    std::vector<Clip<T>> clips;
    std::vector<std::size_t> train, test;
    DatasetConfig config;
};

namespace detail {

/// One bar clip moving toward the axis origin (up for horizontal bars, left
/// for vertical ones); thickness, phase, and intensity are drawn from rng.
template <typename T>
Tensor<T> make_bar_clip(const DatasetConfig& cfg, bool horizontal, Rng& rng) {
    const std::size_t span = horizontal ? cfg.height : cfg.width;
    if (span < cfg.time)  // bar would have to wrap to keep moving
        throw std::invalid_argument("gen_dataset: grid too small for the clip length");
    const std::size_t max_th = std::min<std::size_t>(4, span - cfg.time + 1);
    const std::size_t min_th = std::min<std::size_t>(2, max_th);
    const std::size_t th = min_th + rng.next_u64() % (max_th - min_th + 1);
    // start index of the bar at t=0; it moves one cell per frame toward 0
    const std::size_t lo = cfg.time - 1, hi = span - th;
    const std::size_t start = lo + rng.next_u64() % (hi - lo + 1);
    const double intensity = rng.uniform(0.5, 1.5);

    Tensor<T> clip({1, cfg.time, cfg.height, cfg.width, 2});
    for (std::size_t t = 0; t < cfg.time; ++t) {
        const std::size_t pos = start - t;
        for (std::size_t h = 0; h < cfg.height; ++h)
            for (std::size_t w = 0; w < cfg.width; ++w) {
                const std::size_t along = horizontal ? h : w;
                const bool on = along >= pos && along < pos + th;
                clip(std::size_t{0}, t, h, w, std::size_t{0}) =
                    on ? static_cast<T>(intensity) : T(0);
                clip(std::size_t{0}, t, h, w, std::size_t{1}) = T(1);
            }
    }
    return clip;
}

}  // namespace detail

/// Deterministic dataset of four direction classes. Each Down clip is the
/// exact frame reversal of its paired Up clip (same for Right/Left), and the
/// 80/20 split keeps every reversal pair on one side.
template <typename T>
Dataset<T> gen_dataset(std::uint64_t seed, const DatasetConfig& cfg) {
    if (cfg.n_per_class < 1) throw std::invalid_argument("gen_dataset: need n_per_class >= 1");
    if (cfg.time < 4 || cfg.height < 8 || cfg.width < 8)
        throw std::invalid_argument("gen_dataset: need T >= 4 and H, W >= 8");
    Rng rng(seed);

    Dataset<T> ds;
    ds.config = cfg;
    ds.clips.reserve(4 * cfg.n_per_class);
    auto push_pair = [&ds](Tensor<T> fwd, MotionLabel a, MotionLabel b) {
        Clip<T> first{std::move(fwd), a, ds.clips.size() + 1};
        Clip<T> second{reverse_time(first.data), b, ds.clips.size()};
        ds.clips.push_back(std::move(first));
        ds.clips.push_back(std::move(second));
    };
    for (std::size_t i = 0; i < cfg.n_per_class; ++i)
        push_pair(detail::make_bar_clip<T>(cfg, true, rng), MotionLabel::Up, MotionLabel::Down);
    for (std::size_t i = 0; i < cfg.n_per_class; ++i)
        push_pair(detail::make_bar_clip<T>(cfg, false, rng), MotionLabel::Left,
                  MotionLabel::Right);

    const std::size_t pairs_per_orient = cfg.n_per_class;
    const std::size_t train_pairs = (pairs_per_orient * 8 + 5) / 10;
    for (std::size_t orient = 0; orient < 2; ++orient)
        for (std::size_t i = 0; i < pairs_per_orient; ++i) {
            const std::size_t base = (orient * pairs_per_orient + i) * 2;
            auto& side = i < train_pairs ? ds.train : ds.test;
            side.push_back(base);
            side.push_back(base + 1);
        }
    return ds;
}

// ---------------------------------------------------------------------------

enum class TransformKind { Rsa, SaContent, SaFull, Involution };

inline const char* transform_name(TransformKind k) {
    switch (k) {
        case TransformKind::Rsa: return "rsa";
        case TransformKind::SaContent: return "sa-content";
        case TransformKind::SaFull: return "sa-full";
        case TransformKind::Involution: return "involution";
    }
    return "?";
}

inline bool transform_from_name(const std::string& s, TransformKind& out) {
    for (TransformKind k : {TransformKind::Rsa, TransformKind::SaContent, TransformKind::SaFull,
                            TransformKind::Involution})
        if (s == transform_name(k)) {
            out = k;
            return true;
        }
    return false;
}

struct ProbeConfig {
    TransformKind kind = TransformKind::Rsa;
    std::size_t in_channels = 2;
    std::size_t channels = 16, queries = 2, latent = 8, groups = 8;  // groups = Cq
    NeighborhoodSpec window{3, 3, 3};
    bool normalize = true;
    std::size_t classes = 4;

    std::size_t epochs = 25;
    double lr = 0.5;
    std::size_t batch = 8;
    double clip_norm = 1.0;   // global-norm cap per mini-batch; 0 disables
    double stop_loss = 0.02;  // early stop once mean train loss falls below
};

/// Input projection -> one transform layer -> global average pool -> linear
/// classifier. Global pooling is what makes the reversal-invariance of the
/// content-only attention variant exact.
template <typename T>
struct ProbeModel {
    ProbeConfig config;
    std::uint64_t seed = 0;
    Tensor<T> w_in;   // [C_in, C]
    Tensor<T> w_cls;  // [C, classes]
    RsaParams<T> rsa;
    SaParams<T> sa;
    InvolutionParams<T> inv;

    std::vector<NamedTensor<T>> named_parameters() {
        std::vector<NamedTensor<T>> out{{"w_in", &w_in}, {"w_cls", &w_cls}};
        switch (config.kind) {
            case TransformKind::Rsa:
                out.insert(out.end(), {{"rsa.e_q", &rsa.e_q},
                                       {"rsa.e_k", &rsa.e_k},
                                       {"rsa.e_v", &rsa.e_v},
                                       {"rsa.p1", &rsa.p1},
                                       {"rsa.h1", &rsa.h1},
                                       {"rsa.h2", &rsa.h2},
                                       {"rsa.g_ctx", &rsa.g_ctx}});
                break;
            case TransformKind::SaContent:
            case TransformKind::SaFull:
                out.insert(out.end(), {{"sa.e_q", &sa.e_q},
                                       {"sa.e_k", &sa.e_k},
                                       {"sa.e_v", &sa.e_v},
                                       {"sa.p", &sa.p}});
                break;
            case TransformKind::Involution:
                out.push_back({"inv.p", &inv.p});
                break;
        }
        return out;
    }
};

template <typename T>
ProbeModel<T> make_probe_model(const ProbeConfig& cfg, std::uint64_t seed) {
    Rng rng(seed);
    ProbeModel<T> m;
    m.config = cfg;
    m.seed = seed;
    // Every embedded row is L2-normalized downstream, so the projection's
    // scale never reaches the forward values; a small init only raises the
    // gradient gain through the normalization Jacobian (1/|row|).
    m.w_in = Tensor<T>({cfg.in_channels, cfg.channels});
    fill_normal(m.w_in, rng, 0.25 * std::sqrt(2.0 / static_cast<double>(cfg.in_channels)));
    // Near-zero classifier start: initial logits stay close to uniform, so
    // the first cross-entropy steps are coherent across examples instead of
    // fitting the random init's confident mistakes.
    m.w_cls = Tensor<T>({cfg.channels, cfg.classes});
    fill_uniform(m.w_cls, rng, -0.05 / std::sqrt(double(cfg.channels)),
                 0.05 / std::sqrt(double(cfg.channels)));
    const std::size_t m_ctx = cfg.window.context_size();
    switch (cfg.kind) {
        case TransformKind::Rsa:
            m.rsa = rsa_init<T>(cfg.channels, cfg.queries, cfg.latent, cfg.groups, cfg.window,
                                cfg.normalize, rng);
            break;
        case TransformKind::SaContent:
        case TransformKind::SaFull: {
            const double msra = std::sqrt(2.0 / static_cast<double>(cfg.channels));
            m.sa.e_q = Tensor<T>({cfg.channels, cfg.channels});
            m.sa.e_k = Tensor<T>({cfg.channels, cfg.channels});
            m.sa.e_v = Tensor<T>({cfg.channels, cfg.channels});
            fill_normal(m.sa.e_q, rng, msra);
            fill_normal(m.sa.e_k, rng, msra);
            fill_normal(m.sa.e_v, rng, msra);
            m.sa.p = Tensor<T>({m_ctx, cfg.channels});
            fill_uniform(m.sa.p, rng, -1.0 / std::sqrt(double(cfg.channels)),
                         1.0 / std::sqrt(double(cfg.channels)));
            m.sa.use_content = true;
            m.sa.use_position = cfg.kind == TransformKind::SaFull;
            m.sa.use_softmax = true;
            m.sa.normalize = cfg.normalize;
            break;
        }
        case TransformKind::Involution:
            m.inv.p = Tensor<T>({m_ctx, cfg.channels});
            fill_uniform(m.inv.p, rng, -1.0 / std::sqrt(double(cfg.channels)),
                         1.0 / std::sqrt(double(cfg.channels)));
            break;
    }
    return m;
}

namespace detail {

template <typename T>
Tensor<T> probe_transform(const ProbeModel<T>& m, const Tensor<T>& proj) {
    switch (m.config.kind) {
        case TransformKind::Rsa: return rsa_forward_fast(proj, m.config.window, m.rsa);
        case TransformKind::SaContent:
        case TransformKind::SaFull: return self_attention(proj, m.config.window, m.sa);
        case TransformKind::Involution: return involution(proj, m.config.window, m.inv);
    }
    throw std::logic_error("probe_transform: unknown kind");
}

}  // namespace detail

template <typename T>
std::vector<double> probe_logits(const ProbeModel<T>& m, const Tensor<T>& clip) {
    const Tensor<T> proj = project_rows(clip, m.w_in);
    const Tensor<T> y = detail::probe_transform(m, proj);
    const GridDims g = grid_of(y);
    const std::size_t n = g.positions();
    std::vector<double> pooled(g.channels, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < g.channels; ++c)
            pooled[c] += static_cast<double>(y[i * g.channels + c]);
    for (double& v : pooled) v /= static_cast<double>(n);
    std::vector<double> logits(m.config.classes, 0.0);
    for (std::size_t c = 0; c < pooled.size(); ++c)
        for (std::size_t k = 0; k < logits.size(); ++k)
            logits[k] += pooled[c] * static_cast<double>(m.w_cls(c, k));
    return logits;
}

template <typename T>
struct ClipEval {
    double loss = 0.0;
    bool correct = false;
    std::vector<Tensor<T>> grads;  // aligned with named_parameters() order
};

template <typename T>
ClipEval<T> eval_clip(const ProbeModel<T>& m, const Clip<T>& clip, bool with_grads) {
    const Tensor<T> proj = project_rows(clip.data, m.w_in);
    const Tensor<T> y = detail::probe_transform(m, proj);
    const GridDims g = grid_of(y);
    const std::size_t n = g.positions(), c = g.channels, classes = m.config.classes;

    std::vector<double> pooled(c, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t ch = 0; ch < c; ++ch)
            pooled[ch] += static_cast<double>(y[i * c + ch]);
    for (double& v : pooled) v /= static_cast<double>(n);

    std::vector<double> logits(classes, 0.0);
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t k = 0; k < classes; ++k)
            logits[k] += pooled[ch] * static_cast<double>(m.w_cls(ch, k));

    const int label = static_cast<int>(clip.label);
    std::vector<double> prob = logits;
    softmax_inplace(std::span<double>(prob));
    ClipEval<T> out;
    out.loss = -std::log(std::max(prob[label], 1e-300));
    int argmax = 0;
    for (std::size_t k = 1; k < classes; ++k)
        if (logits[k] > logits[argmax]) argmax = static_cast<int>(k);
    out.correct = argmax == label;
    if (!with_grads) return out;

    // d loss / d logits = p - onehot
    std::vector<double> dlogits = prob;
    dlogits[label] -= 1.0;

    Tensor<T> d_wcls(m.w_cls.shape());
    std::vector<double> dpool(c, 0.0);
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t k = 0; k < classes; ++k) {
            d_wcls(ch, k) = static_cast<T>(pooled[ch] * dlogits[k]);
            dpool[ch] += static_cast<double>(m.w_cls(ch, k)) * dlogits[k];
        }
    Tensor<T> dy(y.shape());
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t ch = 0; ch < c; ++ch)
            dy[i * c + ch] = static_cast<T>(dpool[ch] / static_cast<double>(n));

    Tensor<T> d_win(m.w_in.shape());
    switch (m.config.kind) {
        case TransformKind::Rsa: {
            auto tg = rsa_backward(proj, m.config.window, m.rsa, dy);
            Tensor<T> zero_in(clip.data.shape());
            detail::projection_backward(clip.data, m.w_in, tg.input, d_win, zero_in);
            out.grads = {std::move(d_win),  std::move(d_wcls), std::move(tg.e_q),
                         std::move(tg.e_k), std::move(tg.e_v), std::move(tg.p1),
                         std::move(tg.h1),  std::move(tg.h2),  std::move(tg.g_ctx)};
            return out;
        }
        case TransformKind::SaContent:
        case TransformKind::SaFull: {
            auto tg = sa_backward(proj, m.config.window, m.sa, dy);
            Tensor<T> zero_in(clip.data.shape());
            detail::projection_backward(clip.data, m.w_in, tg.input, d_win, zero_in);
            out.grads = {std::move(d_win), std::move(d_wcls), std::move(tg.e_q),
                         std::move(tg.e_k), std::move(tg.e_v), std::move(tg.p)};
            return out;
        }
        case TransformKind::Involution: {
            auto tg = involution_backward(proj, m.config.window, m.inv, dy);
            Tensor<T> zero_in(clip.data.shape());
            detail::projection_backward(clip.data, m.w_in, tg.input, d_win, zero_in);
            out.grads = {std::move(d_win), std::move(d_wcls), std::move(tg.p)};
            return out;
        }
    }
    throw std::logic_error("eval_clip: unknown kind");
}

struct EpochStats {
    double train_loss = 0, train_acc = 0, test_loss = 0, test_acc = 0;
};

struct TrainReport {
    std::vector<EpochStats> epochs;
    double final_train_acc = 0, final_test_acc = 0;
    double paired_gap_max = 0;
    double paired_gap_frac_above_1e3 = 0;
    bool diverged = false;
    std::uint64_t seed = 0;
};

template <typename T>
struct PairedGapReport {
    double max_gap = 0;
    std::vector<double> gaps;  // one per evaluated clip
};

/// Max absolute difference between the pooled logits of each clip and its
/// exact time reversal. Requires the model's global average pooling, which is
/// what erases the position relabeling a reversal induces.
template <typename T>
PairedGapReport<T> paired_logit_test(const ProbeModel<T>& m, const std::vector<Clip<T>>& clips,
                                     const std::vector<std::size_t>* subset = nullptr,
                                     unsigned threads = 1) {
    std::vector<std::size_t> all;
    if (!subset) {
        all.resize(clips.size());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
        subset = &all;
    }
    PairedGapReport<T> report;
    report.gaps.resize(subset->size(), 0.0);
    parallel_chunks(subset->size(), threads, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) {
            const Clip<T>& clip = clips[(*subset)[i]];
            const auto a = probe_logits(m, clip.data);
            const auto b = probe_logits(m, reverse_time(clip.data));
            double gap = 0.0;
            for (std::size_t k = 0; k < a.size(); ++k)
                gap = std::max(gap, std::abs(a[k] - b[k]));
            report.gaps[i] = gap;
        }
    });
    for (double gap : report.gaps) report.max_gap = std::max(report.max_gap, gap);
    return report;
}

/// Plain mini-batch gradient descent with softmax cross-entropy. Per-clip
/// gradients are reduced in clip order, so the result is independent of the
/// thread count. Stops early once the mean train loss drops under
/// config.stop_loss; aborts (diverged flag) on a non-finite loss.
template <typename T>
TrainReport train(ProbeModel<T>& model, const Dataset<T>& data, std::uint64_t seed,
                  unsigned threads = 1) {
    const ProbeConfig& cfg = model.config;
    TrainReport report;
    report.seed = seed;
    Rng shuffle_rng = Rng(seed).fork(0xba7c5);

    std::vector<std::size_t> order = data.train;
    auto params = model.named_parameters();

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[shuffle_rng.next_u64() % i]);

        double loss_sum = 0.0;
        std::size_t correct = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
            const std::size_t count = std::min(cfg.batch, order.size() - start);
            std::vector<ClipEval<T>> evals(count);
            parallel_chunks(count, threads, [&](std::size_t lo, std::size_t hi) {
                for (std::size_t i = lo; i < hi; ++i)
                    evals[i] = eval_clip(model, data.clips[order[start + i]], true);
            });
            // Reduce per-clip gradients in clip order (thread-count
            // independent), then apply one clipped step.
            std::vector<Tensor<T>> batch_grad;
            for (const auto& nt : params) batch_grad.emplace_back(nt.tensor->shape());
            const T inv_count = static_cast<T>(1.0 / static_cast<double>(count));
            for (std::size_t i = 0; i < count; ++i) {
                loss_sum += evals[i].loss;
                correct += evals[i].correct ? 1 : 0;
                for (std::size_t pi = 0; pi < params.size(); ++pi) {
                    const Tensor<T>& grad = evals[i].grads[pi];
                    Tensor<T>& acc = batch_grad[pi];
                    for (std::size_t j = 0; j < acc.size(); ++j)
                        acc[j] += grad[j] * inv_count;
                }
            }
            double sq = 0.0;
            for (const auto& acc : batch_grad)
                for (std::size_t j = 0; j < acc.size(); ++j)
                    sq += double(acc[j]) * double(acc[j]);
            double step = cfg.lr;
            if (cfg.clip_norm > 0.0 && std::isfinite(sq) && sq > cfg.clip_norm * cfg.clip_norm)
                step *= cfg.clip_norm / std::sqrt(sq);
            for (std::size_t pi = 0; pi < params.size(); ++pi) {
                Tensor<T>& theta = *params[pi].tensor;
                const Tensor<T>& acc = batch_grad[pi];
                for (std::size_t j = 0; j < theta.size(); ++j)
                    theta[j] -= static_cast<T>(step) * acc[j];
            }
        }

        EpochStats stats;
        stats.train_loss = loss_sum / static_cast<double>(order.size());
        stats.train_acc = static_cast<double>(correct) / static_cast<double>(order.size());
        if (!std::isfinite(stats.train_loss)) {
            report.diverged = true;
            report.epochs.push_back(stats);
            return report;
        }

        double test_loss = 0.0;
        std::size_t test_correct = 0;
        std::vector<ClipEval<T>> tevals(data.test.size());
        parallel_chunks(data.test.size(), threads, [&](std::size_t lo, std::size_t hi) {
            for (std::size_t i = lo; i < hi; ++i)
                tevals[i] = eval_clip(model, data.clips[data.test[i]], false);
        });
        for (const auto& e : tevals) {
            test_loss += e.loss;
            test_correct += e.correct ? 1 : 0;
        }
        stats.test_loss = test_loss / static_cast<double>(data.test.size());
        stats.test_acc =
            static_cast<double>(test_correct) / static_cast<double>(data.test.size());
        report.epochs.push_back(stats);
        if (stats.train_loss < cfg.stop_loss) break;
    }

    if (!report.epochs.empty()) {
        report.final_train_acc = report.epochs.back().train_acc;
        report.final_test_acc = report.epochs.back().test_acc;
    }
    auto paired = paired_logit_test(model, data.clips, &data.test, threads);
    report.paired_gap_max = paired.max_gap;
    std::size_t above = 0;
    for (double gap : paired.gaps)
        if (gap > 1e-3) ++above;
    report.paired_gap_frac_above_1e3 =
        paired.gaps.empty() ? 0.0 : static_cast<double>(above) / paired.gaps.size();
    return report;
}

// ---------------------------------------------------------------------------
// Kernel dumps.

template <typename T>
struct KernelDump {
    std::string name;       // e.g. "kr_q1_rev"
    std::vector<T> values;  // length M
};

namespace detail {

template <typename T>
void write_kernel_csv(const std::filesystem::path& path, const NeighborhoodSpec& spec,
                      const std::vector<T>& kernel) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("dump_kernels: cannot write " + path.string());
    os.precision(17);
    std::size_t m = 0;
    for (int dt = 0; dt < spec.m_t; ++dt) {
        for (int dh = 0; dh < spec.m_h; ++dh) {
            for (int dw = 0; dw < spec.m_w; ++dw, ++m) {
                if (dw) os << ',';
                os << kernel[m];
            }
            os << '\n';
        }
        if (dt + 1 < spec.m_t) os << '\n';  // blank line between temporal slices
    }
}

/// Kernels of the model's transform at one grid position of one clip.
template <typename T>
std::vector<KernelDump<T>> kernels_at(const ProbeModel<T>& m, const Tensor<T>& clip,
                                      std::size_t t, std::size_t h, std::size_t w,
                                      const std::string& suffix) {
    const Tensor<T> proj = project_rows(clip, m.w_in);
    const GridDims g = grid_of(proj);
    if (t >= g.time || h >= g.height || w >= g.width)
        throw std::invalid_argument("dump_kernels: position outside the grid");
    const std::size_t n = (t * g.height + h) * g.width + w;
    std::vector<KernelDump<T>> dumps;
    switch (m.config.kind) {
        case TransformKind::Rsa: {
            const auto e = embed(proj, m.config.window, m.rsa);
            const std::size_t cq = m.rsa.query_channels(), mm = m.rsa.context_size();
            for (std::size_t l = 0; l < m.rsa.queries; ++l) {
                std::span<const T> q(e.queries.data() + (n * m.rsa.queries + l) * cq, cq);
                MatView<T> keys{e.keys.data() + n * mm * cq, mm, cq};
                dumps.push_back({"kv_q" + std::to_string(l) + "_" + suffix,
                                 basic_kernel(q, m.rsa)});
                dumps.push_back({"kr_q" + std::to_string(l) + "_" + suffix,
                                 relational_kernel(q, keys, m.rsa)});
            }
            break;
        }
        case TransformKind::SaContent:
        case TransformKind::SaFull: {
            const auto kernels = sa_kernels(proj, m.config.window, m.sa);
            const std::size_t mm = m.config.window.context_size();
            std::vector<T> row(kernels.data() + n * mm, kernels.data() + (n + 1) * mm);
            dumps.push_back({"sa_q0_" + suffix, std::move(row)});
            break;
        }
        case TransformKind::Involution: {
            const std::size_t c = g.channels, mm = m.config.window.context_size();
            std::vector<T> kappa(mm, T(0));
            for (std::size_t i = 0; i < mm; ++i)
                for (std::size_t cc = 0; cc < c; ++cc)
                    kappa[i] += proj[n * c + cc] * m.inv.p(i, cc);
            dumps.push_back({"kv_q0_" + suffix, std::move(kappa)});
            break;
        }
    }
    return dumps;
}

}  // namespace detail

/// Kernels at `position` for the clip and for its time reversal. The
/// reversed clip is probed at the time-mirrored position so both dumps share
/// the same target feature; with an unchanged target the basic kernel must
/// match exactly while the relational kernel is free to differ.
template <typename T>
std::vector<KernelDump<T>> collect_kernels(const ProbeModel<T>& m, const Tensor<T>& clip,
                                           std::array<std::size_t, 3> position) {
    const GridDims g = grid_of(clip);
    const auto [t, h, w] = position;
    auto dumps = detail::kernels_at(m, clip, t, h, w, "orig");
    const Tensor<T> reversed = reverse_time(clip);
    auto rev = detail::kernels_at(m, reversed, g.time - 1 - t, h, w, "rev");
    dumps.insert(dumps.end(), std::make_move_iterator(rev.begin()),
                 std::make_move_iterator(rev.end()));
    return dumps;
}

/// One CSV per kernel, (dh, dw) grids stacked per temporal slice with blank
/// separator lines.
template <typename T>
std::vector<std::filesystem::path> dump_kernels(const ProbeModel<T>& m, const Tensor<T>& clip,
                                                std::array<std::size_t, 3> position,
                                                const std::filesystem::path& out_dir) {
    std::filesystem::create_directories(out_dir);
    std::vector<std::filesystem::path> paths;
    for (const auto& dump : collect_kernels(m, clip, position)) {
        const auto path = out_dir / (dump.name + ".csv");
        detail::write_kernel_csv(path, m.config.window, dump.values);
        paths.push_back(path);
    }
    return paths;
}

// Checkpoint glue.

template <typename T>
void save_probe_checkpoint(const std::filesystem::path& dir, ProbeModel<T>& m) {
    nlohmann::json meta;
    meta["transform"] = transform_name(m.config.kind);
    meta["in_channels"] = m.config.in_channels;
    meta["channels"] = m.config.channels;
    meta["queries"] = m.config.queries;
    meta["latent"] = m.config.latent;
    meta["groups"] = m.config.groups;
    meta["normalize"] = m.config.normalize;
    meta["classes"] = m.config.classes;
    meta["window"] = {m.config.window.m_t, m.config.window.m_h, m.config.window.m_w};
    meta["seed"] = m.seed;
    save_checkpoint(dir, m.named_parameters(), meta);
}

template <typename T>
ProbeModel<T> load_probe_checkpoint(const std::filesystem::path& dir) {
    const nlohmann::json manifest = read_manifest(dir);
    const nlohmann::json& meta = manifest.at("model");
    ProbeConfig cfg;
    TransformKind kind;
    if (!transform_from_name(meta.at("transform").get<std::string>(), kind))
        throw std::runtime_error("checkpoint: unknown transform kind");
    cfg.kind = kind;
    cfg.in_channels = meta.at("in_channels").get<std::size_t>();
    cfg.channels = meta.at("channels").get<std::size_t>();
    cfg.queries = meta.at("queries").get<std::size_t>();
    cfg.latent = meta.at("latent").get<std::size_t>();
    cfg.groups = meta.at("groups").get<std::size_t>();
    cfg.normalize = meta.at("normalize").get<bool>();
    cfg.classes = meta.at("classes").get<std::size_t>();
    const auto window = meta.at("window").get<std::vector<int>>();
    cfg.window = {window.at(0), window.at(1), window.at(2)};

    ProbeModel<T> m = make_probe_model<T>(cfg, meta.value("seed", std::uint64_t{0}));
    load_checkpoint(dir, m.named_parameters());
    return m;
}

}  // namespace rsalab

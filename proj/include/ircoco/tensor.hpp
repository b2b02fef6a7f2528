#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "ircoco/error.hpp"
#include "ircoco/rng.hpp"

namespace ircoco {

// Row-major 2-D float tensor. Scalars are [1 x 1], vectors [1 x n].
struct Tensor {
    int rows = 0;
    int cols = 0;
    std::vector<float> data;
    std::vector<float> grad;  // sized iff requires_grad
    bool requires_grad = false;

    Tensor() = default;
    Tensor(int r, int c, bool rg = false)
        : rows(r), cols(c), data(size_t(r) * size_t(c), 0.0f), requires_grad(rg) {
        if (r <= 0 || c <= 0) throw ContractViolation("tensor shape must be positive");
        if (rg) grad.assign(data.size(), 0.0f);
    }

    size_t numel() const { return data.size(); }
    float& at(int r, int c) { return data[size_t(r) * cols + c]; }
    float at(int r, int c) const { return data[size_t(r) * cols + c]; }
    float& gat(int r, int c) { return grad[size_t(r) * cols + c]; }

    void zero_grad() {
        if (requires_grad) std::fill(grad.begin(), grad.end(), 0.0f);
    }
    void set_requires_grad(bool rg) {
        requires_grad = rg;
        if (rg && grad.size() != data.size()) grad.assign(data.size(), 0.0f);
        if (!rg) grad.clear();
    }
};

using TensorPtr = std::shared_ptr<Tensor>;

inline TensorPtr make_tensor(int rows, int cols, bool requires_grad = false) {
    return std::make_shared<Tensor>(rows, cols, requires_grad);
}

inline TensorPtr tensor_of(std::initializer_list<std::initializer_list<float>> rows_init,
                           bool requires_grad = false) {
    const int r = int(rows_init.size());
    const int c = int(rows_init.begin()->size());
    auto t = make_tensor(r, c, requires_grad);
    int i = 0;
    for (const auto& row : rows_init) {
        if (int(row.size()) != c) throw ContractViolation("ragged tensor literal");
        for (const float v : row) t->data[i++] = v;
    }
    return t;
}

inline TensorPtr scalar_tensor(float v, bool requires_grad = false) {
    auto t = make_tensor(1, 1, requires_grad);
    t->data[0] = v;
    return t;
}

inline TensorPtr full_tensor(int rows, int cols, float v) {
    auto t = make_tensor(rows, cols);
    std::fill(t->data.begin(), t->data.end(), v);
    return t;
}

// Records the forward pass. Nodes are appended in execution order, which is a
// valid topological order, so backward is a single reverse sweep.
class Tape {
public:
    bool recording = true;

    void record(const TensorPtr& out, std::function<void()> back) {
        outputs_.insert(out.get());
        backs_.push_back(std::move(back));
    }

    bool produced(const Tensor* t) const { return outputs_.count(t) > 0; }
    size_t node_count() const { return backs_.size(); }

    // Seeds d(loss)/d(loss) = 1 and replays every node's rule in reverse
    // order. Leaves that do not reach the loss keep their zero gradient.
    void backward(const TensorPtr& loss) {
        if (!loss) throw ContractViolation("backward: null loss");
        if (loss->numel() != 1) throw ContractViolation("backward: loss must be scalar");
        if (!produced(loss.get())) throw ContractViolation("backward: loss was not produced on this tape");
        if (!loss->requires_grad) throw ContractViolation("backward: loss does not require grad");
        loss->grad[0] = 1.0f;
        for (auto it = backs_.rbegin(); it != backs_.rend(); ++it) (*it)();
    }

    void clear() {
        backs_.clear();
        outputs_.clear();
    }

private:
    std::vector<std::function<void()>> backs_;
    std::unordered_set<const Tensor*> outputs_;
};

namespace detail {

inline void check_finite(const Tensor& t, const char* op) {
    double acc = 0.0;
    for (const float v : t.data) acc += std::fabs(double(v));
    if (!std::isfinite(acc))
        throw NumericError(std::string("non-finite output of ") + op);
}

inline bool track(const Tape& tape, std::initializer_list<const TensorPtr*> ins) {
    if (!tape.recording) return false;
    for (const auto* p : ins)
        if (*p && (*p)->requires_grad) return true;
    return false;
}

inline TensorPtr make_out(int r, int c, bool rg) {
    auto t = make_tensor(r, c, rg);
    return t;
}

enum class Broadcast { full, row, scalar };

inline Broadcast broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
    if (a.rows == b.rows && a.cols == b.cols) return Broadcast::full;
    if (b.rows == 1 && b.cols == a.cols) return Broadcast::row;
    if (b.rows == 1 && b.cols == 1) return Broadcast::scalar;
    throw ContractViolation(std::string(op) + ": shape mismatch [" + std::to_string(a.rows) + "x" +
                            std::to_string(a.cols) + "] vs [" + std::to_string(b.rows) + "x" +
                            std::to_string(b.cols) + "]");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Primitives. Each computes forward eagerly and, when any input requires
// grad and the tape is recording, registers one backward rule.
// ---------------------------------------------------------------------------

inline TensorPtr matmul(Tape& tape, const TensorPtr& a, const TensorPtr& b) {
    if (a->cols != b->rows)
        throw ContractViolation("matmul: inner dimensions disagree (" + std::to_string(a->cols) +
                                " vs " + std::to_string(b->rows) + ")");
    const int M = a->rows, K = a->cols, N = b->cols;
    const bool rg = detail::track(tape, {&a, &b});
    auto out = detail::make_out(M, N, rg);
    const float* A = a->data.data();
    const float* B = b->data.data();
    float* C = out->data.data();
    for (int i = 0; i < M; ++i) {
        float* crow = C + size_t(i) * N;
        for (int k = 0; k < K; ++k) {
            const float aik = A[size_t(i) * K + k];
            const float* brow = B + size_t(k) * N;
            for (int j = 0; j < N; ++j) crow[j] += aik * brow[j];
        }
    }
    detail::check_finite(*out, "matmul");
    if (rg) {
        tape.record(out, [a, b, out, M, K, N] {
            const float* G = out->grad.data();
            if (a->requires_grad) {
                float* GA = a->grad.data();
                const float* B_ = b->data.data();
                for (int i = 0; i < M; ++i)
                    for (int k = 0; k < K; ++k) {
                        const float* grow = G + size_t(i) * N;
                        const float* brow = B_ + size_t(k) * N;
                        float s = 0.0f;
                        for (int j = 0; j < N; ++j) s += grow[j] * brow[j];
                        GA[size_t(i) * K + k] += s;
                    }
            }
            if (b->requires_grad) {
                float* GB = b->grad.data();
                const float* A_ = a->data.data();
                for (int k = 0; k < K; ++k)
                    for (int i = 0; i < M; ++i) {
                        const float aik = A_[size_t(i) * K + k];
                        const float* grow = G + size_t(i) * N;
                        float* gbrow = GB + size_t(k) * N;
                        for (int j = 0; j < N; ++j) gbrow[j] += aik * grow[j];
                    }
            }
        });
    }
    return out;
}

// matmul with the right operand transposed: A [M x K] . B^T where B is
// [N x K]. Saves materializing transposes in attention.
inline TensorPtr matmul_nt(Tape& tape, const TensorPtr& a, const TensorPtr& b) {
    if (a->cols != b->cols)
        throw ContractViolation("matmul_nt: inner dimensions disagree (" + std::to_string(a->cols) +
                                " vs " + std::to_string(b->cols) + ")");
    const int M = a->rows, K = a->cols, N = b->rows;
    const bool rg = detail::track(tape, {&a, &b});
    auto out = detail::make_out(M, N, rg);
    for (int i = 0; i < M; ++i) {
        const float* arow = a->data.data() + size_t(i) * K;
        float* crow = out->data.data() + size_t(i) * N;
        for (int j = 0; j < N; ++j) {
            const float* brow = b->data.data() + size_t(j) * K;
            float s = 0.0f;
            for (int k = 0; k < K; ++k) s += arow[k] * brow[k];
            crow[j] = s;
        }
    }
    detail::check_finite(*out, "matmul_nt");
    if (rg) {
        tape.record(out, [a, b, out, M, K, N] {
            const float* G = out->grad.data();
            if (a->requires_grad) {
                // dA = G . B
                for (int i = 0; i < M; ++i) {
                    float* garow = a->grad.data() + size_t(i) * K;
                    for (int j = 0; j < N; ++j) {
                        const float g = G[size_t(i) * N + j];
                        const float* brow = b->data.data() + size_t(j) * K;
                        for (int k = 0; k < K; ++k) garow[k] += g * brow[k];
                    }
                }
            }
            if (b->requires_grad) {
                // dB = G^T . A
                for (int j = 0; j < N; ++j) {
                    float* gbrow = b->grad.data() + size_t(j) * K;
                    for (int i = 0; i < M; ++i) {
                        const float g = G[size_t(i) * N + j];
                        const float* arow = a->data.data() + size_t(i) * K;
                        for (int k = 0; k < K; ++k) gbrow[k] += g * arow[k];
                    }
                }
            }
        });
    }
    return out;
}

inline TensorPtr add(Tape& tape, const TensorPtr& a, const TensorPtr& b) {
    const auto kind = detail::broadcast_kind(*a, *b, "add");
    const bool rg = detail::track(tape, {&a, &b});
    auto out = detail::make_out(a->rows, a->cols, rg);
    const int R = a->rows, C = a->cols;
    for (int i = 0; i < R; ++i)
        for (int j = 0; j < C; ++j) {
            const float bv = kind == detail::Broadcast::full ? b->at(i, j)
                             : kind == detail::Broadcast::row ? b->data[j]
                                                              : b->data[0];
            out->at(i, j) = a->at(i, j) + bv;
        }
    detail::check_finite(*out, "add");
    if (rg) {
        tape.record(out, [a, b, out, kind, R, C] {
            if (a->requires_grad)
                for (size_t i = 0; i < a->grad.size(); ++i) a->grad[i] += out->grad[i];
            if (b->requires_grad) {
                for (int i = 0; i < R; ++i)
                    for (int j = 0; j < C; ++j) {
                        const float g = out->grad[size_t(i) * C + j];
                        if (kind == detail::Broadcast::full) b->gat(i, j) += g;
                        else if (kind == detail::Broadcast::row) b->grad[j] += g;
                        else b->grad[0] += g;
                    }
            }
        });
    }
    return out;
}

inline TensorPtr mul(Tape& tape, const TensorPtr& a, const TensorPtr& b) {
    const auto kind = detail::broadcast_kind(*a, *b, "mul");
    const bool rg = detail::track(tape, {&a, &b});
    auto out = detail::make_out(a->rows, a->cols, rg);
    const int R = a->rows, C = a->cols;
    for (int i = 0; i < R; ++i)
        for (int j = 0; j < C; ++j) {
            const float bv = kind == detail::Broadcast::full ? b->at(i, j)
                             : kind == detail::Broadcast::row ? b->data[j]
                                                              : b->data[0];
            out->at(i, j) = a->at(i, j) * bv;
        }
    detail::check_finite(*out, "mul");
    if (rg) {
        tape.record(out, [a, b, out, kind, R, C] {
            for (int i = 0; i < R; ++i)
                for (int j = 0; j < C; ++j) {
                    const float g = out->grad[size_t(i) * C + j];
                    const float bv = kind == detail::Broadcast::full ? b->at(i, j)
                                     : kind == detail::Broadcast::row ? b->data[j]
                                                                      : b->data[0];
                    if (a->requires_grad) a->gat(i, j) += g * bv;
                    if (b->requires_grad) {
                        const float av = a->at(i, j);
                        if (kind == detail::Broadcast::full) b->gat(i, j) += g * av;
                        else if (kind == detail::Broadcast::row) b->grad[j] += g * av;
                        else b->grad[0] += g * av;
                    }
                }
        });
    }
    return out;
}

inline TensorPtr softmax_rows(Tape& tape, const TensorPtr& a) {
    const bool rg = detail::track(tape, {&a});
    auto out = detail::make_out(a->rows, a->cols, rg);
    const int R = a->rows, C = a->cols;
    for (int i = 0; i < R; ++i) {
        const float* x = a->data.data() + size_t(i) * C;
        float* y = out->data.data() + size_t(i) * C;
        float mx = x[0];
        for (int j = 1; j < C; ++j) mx = std::max(mx, x[j]);
        float denom = 0.0f;
        for (int j = 0; j < C; ++j) {
            y[j] = std::exp(x[j] - mx);
            denom += y[j];
        }
        const float inv = 1.0f / denom;
        for (int j = 0; j < C; ++j) y[j] *= inv;
    }
    detail::check_finite(*out, "softmax_rows");
    if (rg) {
        tape.record(out, [a, out, R, C] {
            for (int i = 0; i < R; ++i) {
                const float* y = out->data.data() + size_t(i) * C;
                const float* g = out->grad.data() + size_t(i) * C;
                float dot = 0.0f;
                for (int j = 0; j < C; ++j) dot += y[j] * g[j];
                float* ga = a->grad.data() + size_t(i) * C;
                for (int j = 0; j < C; ++j) ga[j] += y[j] * (g[j] - dot);
            }
        });
    }
    return out;
}

// Pure row normalization; learnable gain/bias are applied by callers via mul/add.
inline TensorPtr layer_norm(Tape& tape, const TensorPtr& a) {
    constexpr float kEps = 1e-5f;
    const bool rg = detail::track(tape, {&a});
    auto out = detail::make_out(a->rows, a->cols, rg);
    const int R = a->rows, C = a->cols;
    std::vector<float> inv_std(R);
    for (int i = 0; i < R; ++i) {
        const float* x = a->data.data() + size_t(i) * C;
        float mean = 0.0f;
        for (int j = 0; j < C; ++j) mean += x[j];
        mean /= float(C);
        float var = 0.0f;
        for (int j = 0; j < C; ++j) {
            const float d = x[j] - mean;
            var += d * d;
        }
        var /= float(C);
        const float inv = 1.0f / std::sqrt(var + kEps);
        inv_std[i] = inv;
        float* y = out->data.data() + size_t(i) * C;
        for (int j = 0; j < C; ++j) y[j] = (x[j] - mean) * inv;
    }
    detail::check_finite(*out, "layer_norm");
    if (rg) {
        tape.record(out, [a, out, R, C, inv_std = std::move(inv_std)] {
            for (int i = 0; i < R; ++i) {
                const float* y = out->data.data() + size_t(i) * C;
                const float* g = out->grad.data() + size_t(i) * C;
                float gm = 0.0f, gym = 0.0f;
                for (int j = 0; j < C; ++j) {
                    gm += g[j];
                    gym += g[j] * y[j];
                }
                gm /= float(C);
                gym /= float(C);
                float* ga = a->grad.data() + size_t(i) * C;
                const float inv = inv_std[i];
                for (int j = 0; j < C; ++j) ga[j] += inv * (g[j] - gm - y[j] * gym);
            }
        });
    }
    return out;
}

inline TensorPtr gelu(Tape& tape, const TensorPtr& a) {
    static constexpr float kC = 0.7978845608028654f;  // sqrt(2/pi)
    static constexpr float kA = 0.044715f;
    const bool rg = detail::track(tape, {&a});
    auto out = detail::make_out(a->rows, a->cols, rg);
    for (size_t i = 0; i < a->data.size(); ++i) {
        const float x = a->data[i];
        const float u = kC * (x + kA * x * x * x);
        out->data[i] = 0.5f * x * (1.0f + std::tanh(u));
    }
    detail::check_finite(*out, "gelu");
    if (rg) {
        tape.record(out, [a, out] {
            for (size_t i = 0; i < a->data.size(); ++i) {
                const float x = a->data[i];
                const float u = kC * (x + kA * x * x * x);
                const float t = std::tanh(u);
                const float du = kC * (1.0f + 3.0f * kA * x * x);
                const float d = 0.5f * (1.0f + t) + 0.5f * x * (1.0f - t * t) * du;
                a->grad[i] += out->grad[i] * d;
            }
        });
    }
    return out;
}

// Elementwise logistic squashing into (0, 1); used by the critic's scalar head.
inline TensorPtr logistic(Tape& tape, const TensorPtr& a) {
    const bool rg = detail::track(tape, {&a});
    auto out = detail::make_out(a->rows, a->cols, rg);
    for (size_t i = 0; i < a->data.size(); ++i)
        out->data[i] = 1.0f / (1.0f + std::exp(-a->data[i]));
    detail::check_finite(*out, "logistic");
    if (rg) {
        tape.record(out, [a, out] {
            for (size_t i = 0; i < a->data.size(); ++i) {
                const float y = out->data[i];
                a->grad[i] += out->grad[i] * y * (1.0f - y);
            }
        });
    }
    return out;
}

inline TensorPtr embed_lookup(Tape& tape, const TensorPtr& table, std::span<const int> ids) {
    if (ids.empty()) throw ContractViolation("embed_lookup: empty id list");
    for (const int id : ids)
        if (id < 0 || id >= table->rows)
            throw IndexError("embed_lookup: id " + std::to_string(id) + " outside table of " +
                             std::to_string(table->rows));
    const int T = int(ids.size()), D = table->cols;
    const bool rg = detail::track(tape, {&table});
    auto out = detail::make_out(T, D, rg);
    for (int t = 0; t < T; ++t)
        std::memcpy(out->data.data() + size_t(t) * D, table->data.data() + size_t(ids[t]) * D,
                    size_t(D) * sizeof(float));
    detail::check_finite(*out, "embed_lookup");
    if (rg) {
        std::vector<int> idv(ids.begin(), ids.end());
        tape.record(out, [table, out, idv = std::move(idv), D] {
            for (size_t t = 0; t < idv.size(); ++t) {
                float* dst = table->grad.data() + size_t(idv[t]) * D;
                const float* src = out->grad.data() + t * D;
                for (int j = 0; j < D; ++j) dst[j] += src[j];
            }
        });
    }
    return out;
}

inline TensorPtr concat_rows(Tape& tape, const TensorPtr& a, const TensorPtr& b) {
    if (a->cols != b->cols) throw ContractViolation("concat_rows: column counts disagree");
    const bool rg = detail::track(tape, {&a, &b});
    auto out = detail::make_out(a->rows + b->rows, a->cols, rg);
    std::memcpy(out->data.data(), a->data.data(), a->data.size() * sizeof(float));
    std::memcpy(out->data.data() + a->data.size(), b->data.data(), b->data.size() * sizeof(float));
    detail::check_finite(*out, "concat_rows");
    if (rg) {
        tape.record(out, [a, b, out] {
            if (a->requires_grad)
                for (size_t i = 0; i < a->grad.size(); ++i) a->grad[i] += out->grad[i];
            if (b->requires_grad)
                for (size_t i = 0; i < b->grad.size(); ++i)
                    b->grad[i] += out->grad[a->data.size() + i];
        });
    }
    return out;
}

inline TensorPtr slice_rows(Tape& tape, const TensorPtr& a, int start, int len) {
    if (start < 0 || len <= 0 || start + len > a->rows)
        throw ContractViolation("slice_rows: range [" + std::to_string(start) + ", " +
                                std::to_string(start + len) + ") outside " + std::to_string(a->rows) +
                                " rows");
    const bool rg = detail::track(tape, {&a});
    auto out = detail::make_out(len, a->cols, rg);
    std::memcpy(out->data.data(), a->data.data() + size_t(start) * a->cols,
                out->data.size() * sizeof(float));
    detail::check_finite(*out, "slice_rows");
    if (rg) {
        tape.record(out, [a, out, start] {
            float* dst = a->grad.data() + size_t(start) * a->cols;
            for (size_t i = 0; i < out->grad.size(); ++i) dst[i] += out->grad[i];
        });
    }
    return out;
}

// Per-row -log softmax(logits)[target], fused for stability. Output is [T x 1].
inline TensorPtr cross_entropy_rows(Tape& tape, const TensorPtr& logits,
                                    std::span<const int> targets) {
    if (int(targets.size()) != logits->rows)
        throw ContractViolation("cross_entropy_rows: one target per row required");
    const int R = logits->rows, C = logits->cols;
    for (const int t : targets)
        if (t < 0 || t >= C) throw IndexError("cross_entropy_rows: target id out of range");
    const bool rg = detail::track(tape, {&logits});
    auto out = detail::make_out(R, 1, rg);
    auto probs = std::make_shared<std::vector<float>>(size_t(R) * C);
    for (int i = 0; i < R; ++i) {
        const float* z = logits->data.data() + size_t(i) * C;
        float mx = z[0];
        for (int j = 1; j < C; ++j) mx = std::max(mx, z[j]);
        float denom = 0.0f;
        float* p = probs->data() + size_t(i) * C;
        for (int j = 0; j < C; ++j) {
            p[j] = std::exp(z[j] - mx);
            denom += p[j];
        }
        const float inv = 1.0f / denom;
        for (int j = 0; j < C; ++j) p[j] *= inv;
        out->data[i] = std::log(denom) + mx - z[targets[i]];
    }
    detail::check_finite(*out, "cross_entropy_rows");
    if (rg) {
        std::vector<int> tv(targets.begin(), targets.end());
        tape.record(out, [logits, out, probs, tv = std::move(tv), R, C] {
            for (int i = 0; i < R; ++i) {
                const float g = out->grad[i];
                if (g == 0.0f) continue;
                const float* p = probs->data() + size_t(i) * C;
                float* gl = logits->grad.data() + size_t(i) * C;
                for (int j = 0; j < C; ++j) gl[j] += g * p[j];
                gl[tv[i]] -= g;
            }
        });
    }
    return out;
}

// Mean squared error over all elements; returns a [1 x 1] scalar.
inline TensorPtr mse(Tape& tape, const TensorPtr& pred, const TensorPtr& target) {
    if (pred->rows != target->rows || pred->cols != target->cols)
        throw ContractViolation("mse: shape mismatch");
    const bool rg = detail::track(tape, {&pred, &target});
    auto out = detail::make_out(1, 1, rg);
    const float invn = 1.0f / float(pred->numel());
    float acc = 0.0f;
    for (size_t i = 0; i < pred->data.size(); ++i) {
        const float d = pred->data[i] - target->data[i];
        acc += d * d;
    }
    out->data[0] = acc * invn;
    detail::check_finite(*out, "mse");
    if (rg) {
        tape.record(out, [pred, target, out, invn] {
            const float g = out->grad[0] * 2.0f * invn;
            for (size_t i = 0; i < pred->data.size(); ++i) {
                const float d = pred->data[i] - target->data[i];
                if (pred->requires_grad) pred->grad[i] += g * d;
                if (target->requires_grad) target->grad[i] -= g * d;
            }
        });
    }
    return out;
}

// [T x T] additive mask: 0 on and below the diagonal, -1e9 above.
inline TensorPtr causal_mask(int t) {
    auto m = make_tensor(t, t);
    for (int i = 0; i < t; ++i)
        for (int j = i + 1; j < t; ++j) m->at(i, j) = -1e9f;
    return m;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamConfig {
    float lr = 1e-3f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
    float grad_clip = 0.0f;  // global-norm clip; 0 disables
};

struct AdamState {
    AdamConfig cfg;
    long t = 0;
    std::vector<std::vector<float>> m, v;

    void init(const std::vector<TensorPtr>& params, const AdamConfig& c) {
        cfg = c;
        t = 0;
        m.clear();
        v.clear();
        for (const auto& p : params) {
            m.emplace_back(p->numel(), 0.0f);
            v.emplace_back(p->numel(), 0.0f);
        }
    }
};

// Scales all gradients so their global L2 norm is at most max_norm.
inline double clip_global_norm(const std::vector<TensorPtr>& params, float max_norm) {
    double sq = 0.0;
    for (const auto& p : params)
        for (const float g : p->grad) sq += double(g) * double(g);
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0f && norm > max_norm) {
        const float s = float(max_norm / norm);
        for (const auto& p : params)
            for (float& g : p->grad) g *= s;
    }
    return norm;
}

// Standard Adam update with bias correction, reading each param's .grad.
inline void adam_step(const std::vector<TensorPtr>& params, AdamState& s) {
    if (params.size() != s.m.size()) throw ContractViolation("adam_step: state/param count mismatch");
    if (s.cfg.grad_clip > 0.0f) clip_global_norm(params, s.cfg.grad_clip);
    s.t += 1;
    const float bc1 = 1.0f - float(std::pow(double(s.cfg.beta1), double(s.t)));
    const float bc2 = 1.0f - float(std::pow(double(s.cfg.beta2), double(s.t)));
    for (size_t i = 0; i < params.size(); ++i) {
        Tensor& p = *params[i];
        if (p.grad.size() != p.data.size())
            throw ContractViolation("adam_step: parameter missing gradient");
        if (s.m[i].size() != p.data.size()) throw ContractViolation("adam_step: shape mismatch");
        float* m = s.m[i].data();
        float* v = s.v[i].data();
        for (size_t j = 0; j < p.data.size(); ++j) {
            const float g = p.grad[j];
            m[j] = s.cfg.beta1 * m[j] + (1.0f - s.cfg.beta1) * g;
            v[j] = s.cfg.beta2 * v[j] + (1.0f - s.cfg.beta2) * g * g;
            const float mhat = m[j] / bc1;
            const float vhat = v[j] / bc2;
            p.data[j] -= s.cfg.lr * mhat / (std::sqrt(vhat) + s.cfg.eps);
        }
    }
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checking
// ---------------------------------------------------------------------------

struct FdEntry {
    std::string name;
    double max_rel_err = 0.0;
};

struct FdReport {
    std::vector<FdEntry> entries;
    double tol = 0.0;
    bool pass = true;
};

// loss_fn must zero grads, rebuild the graph, run backward, and return the
// loss value. For each tensor the probe perturbs the entries with the largest
// analytic gradients (the informative ones) by +/- eps and compares the
// central difference against the analytic value, all in double.
inline FdReport finite_difference_check(const std::function<double()>& loss_fn,
                                        const std::vector<std::pair<std::string, TensorPtr>>& params,
                                        double eps, double tol, int samples_per_tensor = 16) {
    if (eps <= 0.0) throw ContractViolation("finite_difference_check: eps must be positive");
    FdReport report;
    report.tol = tol;
    const double base = loss_fn();
    if (!std::isfinite(base)) throw NumericError("finite_difference_check: non-finite loss");
    std::vector<std::vector<float>> analytic;
    analytic.reserve(params.size());
    for (const auto& [name, p] : params) analytic.push_back(p->grad);

    for (size_t pi = 0; pi < params.size(); ++pi) {
        const auto& [name, p] = params[pi];
        const auto& g = analytic[pi];
        std::vector<size_t> order(g.size());
        std::iota(order.begin(), order.end(), size_t(0));
        std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
            return std::fabs(g[a]) > std::fabs(g[b]);
        });
        const int probes = std::min<int>(samples_per_tensor, int(order.size()));
        FdEntry entry{name, 0.0};
        for (int s = 0; s < probes; ++s) {
            const size_t idx = order[s];
            const float saved = p->data[idx];
            // Use the deltas actually realized in f32 so the probe is not
            // polluted by the representation error of eps itself.
            const float up_v = float(double(saved) + eps);
            const float down_v = float(double(saved) - eps);
            p->data[idx] = up_v;
            const double up = loss_fn();
            p->data[idx] = down_v;
            const double down = loss_fn();
            p->data[idx] = saved;
            if (!std::isfinite(up) || !std::isfinite(down))
                throw NumericError("finite_difference_check: non-finite loss while probing " + name);
            const double numeric = (up - down) / (double(up_v) - double(down_v));
            const double rel = std::fabs(double(g[idx]) - numeric) / (std::fabs(numeric) + 1e-8);
            entry.max_rel_err = std::max(entry.max_rel_err, rel);
        }
        if (entry.max_rel_err > tol) report.pass = false;
        report.entries.push_back(std::move(entry));
    }
    // Restore analytic grads for the unperturbed point.
    loss_fn();
    (void)base;
    return report;
}

}  // namespace ircoco

#include "sar/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace sar {

namespace {

std::atomic<uint64_t> g_seq{1};
thread_local bool g_grad_enabled = true;

size_t shape_size(const std::vector<int>& shape) {
    size_t n = 1;
    for (int d : shape) {
        if (d < 0) throw std::invalid_argument("tensor: negative dim");
        n *= size_t(d);
    }
    return n;
}

TensorPtr make_node(std::vector<int> shape, std::vector<float> data) {
    auto t = std::make_shared<Tensor>();
    t->shape = std::move(shape);
    if (data.size() != shape_size(t->shape)) throw std::invalid_argument("tensor: data size mismatch");
    t->val = std::make_shared<std::vector<float>>(std::move(data));
    t->seq = g_seq.fetch_add(1, std::memory_order_relaxed);
    return t;
}

// Wire an op result into the graph: records parents and the backward thunk
// only when grad mode is on and some input needs gradients.
TensorPtr finish(TensorPtr out, std::vector<TensorPtr> parents, std::function<void()> bw) {
    bool need = false;
    if (g_grad_enabled) {
        for (const auto& p : parents) need = need || p->requires_grad;
    }
    if (need) {
        out->requires_grad = true;
        out->parents = std::move(parents);
        out->backward_fn = std::move(bw);
    }
    return out;
}

void check_2d(const TensorPtr& t, const char* who) {
    if (t->shape.size() != 2) throw std::invalid_argument(std::string(who) + ": expected 2-D tensor");
}

// ---- raw fp32 kernels ----

// c += a (m x k) * b (k x n)
void mm_nn_acc(float* c, const float* a, const float* b, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        float* ci = c + size_t(i) * size_t(n);
        const float* ai = a + size_t(i) * size_t(k);
        for (int p = 0; p < k; ++p) {
            const float av = ai[p];
            const float* bp = b + size_t(p) * size_t(n);
            for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

// c += a (m x k) * b^T, b is (n x k)
void mm_nt_acc(float* c, const float* a, const float* b, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const float* ai = a + size_t(i) * size_t(k);
        float* ci = c + size_t(i) * size_t(n);
        for (int j = 0; j < n; ++j) {
            const float* bj = b + size_t(j) * size_t(k);
            float acc = 0.f;
            for (int p = 0; p < k; ++p) acc += ai[p] * bj[p];
            ci[j] += acc;
        }
    }
}

// c += a^T (a is k x m) * b (k x n)
void mm_tn_acc(float* c, const float* a, const float* b, int m, int k, int n) {
    for (int p = 0; p < k; ++p) {
        const float* ap = a + size_t(p) * size_t(m);
        const float* bp = b + size_t(p) * size_t(n);
        for (int i = 0; i < m; ++i) {
            const float av = ap[i];
            float* ci = c + size_t(i) * size_t(n);
            for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

}  // namespace

float Tensor::item() const {
    if (size() != 1) throw std::invalid_argument("item: tensor is not scalar");
    return (*val)[0];
}

void Tensor::ensure_grad() {
    if (grad.size() != size()) grad.assign(size(), 0.f);
}

void Tensor::zero_grad() { std::fill(grad.begin(), grad.end(), 0.f); }

TensorPtr tensor(std::vector<int> shape, bool requires_grad) {
    auto t = make_node(shape, std::vector<float>(shape_size(shape), 0.f));
    t->requires_grad = requires_grad;
    if (requires_grad) t->ensure_grad();
    return t;
}

TensorPtr tensor(std::vector<int> shape, std::vector<float> data, bool requires_grad) {
    auto t = make_node(std::move(shape), std::move(data));
    t->requires_grad = requires_grad;
    if (requires_grad) t->ensure_grad();
    return t;
}

TensorPtr param_view(const TensorPtr& param) {
    auto t = std::make_shared<Tensor>();
    t->shape = param->shape;
    t->val = param->val;  // alias the storage, own the grads
    t->requires_grad = true;
    t->ensure_grad();
    t->seq = g_seq.fetch_add(1, std::memory_order_relaxed);
    return t;
}

bool grad_enabled() { return g_grad_enabled; }
NoGrad::NoGrad() : prev(g_grad_enabled) { g_grad_enabled = false; }
NoGrad::~NoGrad() { g_grad_enabled = prev; }

TensorPtr matmul(const TensorPtr& a, const TensorPtr& b) {
    check_2d(a, "matmul");
    check_2d(b, "matmul");
    const int m = a->rows(), k = a->cols(), n = b->cols();
    if (b->rows() != k) throw std::invalid_argument("matmul: inner dims mismatch");
    auto out = tensor({m, n});
    mm_nn_acc(out->data(), a->data(), b->data(), m, k, n);
    return finish(out, {a, b}, [a, b, out, m, k, n] {
        if (a->requires_grad) {
            a->ensure_grad();
            mm_nt_acc(a->grad.data(), out->grad.data(), b->data(), m, n, k);
        }
        if (b->requires_grad) {
            b->ensure_grad();
            mm_tn_acc(b->grad.data(), a->data(), out->grad.data(), k, m, n);
        }
    });
}

TensorPtr matmul_nt(const TensorPtr& a, const TensorPtr& b) {
    check_2d(a, "matmul_nt");
    check_2d(b, "matmul_nt");
    const int m = a->rows(), k = a->cols(), n = b->rows();
    if (b->cols() != k) throw std::invalid_argument("matmul_nt: inner dims mismatch");
    auto out = tensor({m, n});
    mm_nt_acc(out->data(), a->data(), b->data(), m, k, n);
    return finish(out, {a, b}, [a, b, out, m, k, n] {
        if (a->requires_grad) {
            a->ensure_grad();
            mm_nn_acc(a->grad.data(), out->grad.data(), b->data(), m, n, k);
        }
        if (b->requires_grad) {
            b->ensure_grad();
            mm_tn_acc(b->grad.data(), out->grad.data(), a->data(), n, m, k);
        }
    });
}

TensorPtr add(const TensorPtr& a, const TensorPtr& b) {
    if (a->shape != b->shape) throw std::invalid_argument("add: shape mismatch");
    auto out = tensor(a->shape);
    const size_t n = a->size();
    for (size_t i = 0; i < n; ++i) out->data()[i] = a->data()[i] + b->data()[i];
    return finish(out, {a, b}, [a, b, out, n] {
        if (a->requires_grad) {
            a->ensure_grad();
            for (size_t i = 0; i < n; ++i) a->grad[i] += out->grad[i];
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (size_t i = 0; i < n; ++i) b->grad[i] += out->grad[i];
        }
    });
}

TensorPtr add_rowvec(const TensorPtr& a, const TensorPtr& v) {
    check_2d(a, "add_rowvec");
    if (v->rows() != 1 || v->cols() != a->cols()) throw std::invalid_argument("add_rowvec: bad vector");
    const int m = a->rows(), n = a->cols();
    auto out = tensor({m, n});
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            out->data()[size_t(i) * n + j] = a->data()[size_t(i) * n + j] + v->data()[j];
        }
    }
    return finish(out, {a, v}, [a, v, out, m, n] {
        if (a->requires_grad) {
            a->ensure_grad();
            for (size_t i = 0; i < size_t(m) * size_t(n); ++i) a->grad[i] += out->grad[i];
        }
        if (v->requires_grad) {
            v->ensure_grad();
            for (int i = 0; i < m; ++i) {
                for (int j = 0; j < n; ++j) v->grad[size_t(j)] += out->grad[size_t(i) * n + j];
            }
        }
    });
}

TensorPtr mul(const TensorPtr& a, const TensorPtr& b) {
    if (a->shape != b->shape) throw std::invalid_argument("mul: shape mismatch");
    auto out = tensor(a->shape);
    const size_t n = a->size();
    for (size_t i = 0; i < n; ++i) out->data()[i] = a->data()[i] * b->data()[i];
    return finish(out, {a, b}, [a, b, out, n] {
        if (a->requires_grad) {
            a->ensure_grad();
            for (size_t i = 0; i < n; ++i) a->grad[i] += out->grad[i] * b->data()[i];
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (size_t i = 0; i < n; ++i) b->grad[i] += out->grad[i] * a->data()[i];
        }
    });
}

TensorPtr scale(const TensorPtr& a, float c) {
    auto out = tensor(a->shape);
    const size_t n = a->size();
    for (size_t i = 0; i < n; ++i) out->data()[i] = a->data()[i] * c;
    return finish(out, {a}, [a, out, c, n] {
        if (!a->requires_grad) return;
        a->ensure_grad();
        for (size_t i = 0; i < n; ++i) a->grad[i] += out->grad[i] * c;
    });
}

TensorPtr silu(const TensorPtr& a) {
    auto out = tensor(a->shape);
    const size_t n = a->size();
    for (size_t i = 0; i < n; ++i) {
        const float x = a->data()[i];
        out->data()[i] = x / (1.f + std::exp(-x));
    }
    return finish(out, {a}, [a, out, n] {
        if (!a->requires_grad) return;
        a->ensure_grad();
        for (size_t i = 0; i < n; ++i) {
            const float x = a->data()[i];
            const float s = 1.f / (1.f + std::exp(-x));
            a->grad[i] += out->grad[i] * (s * (1.f + x * (1.f - s)));
        }
    });
}

TensorPtr rmsnorm(const TensorPtr& a, const TensorPtr& gain, float eps) {
    check_2d(a, "rmsnorm");
    const int m = a->rows(), n = a->cols();
    if (gain->rows() != 1 || gain->cols() != n) throw std::invalid_argument("rmsnorm: bad gain");
    auto out = tensor({m, n});
    std::vector<float> inv_rms(size_t(m));
    for (int i = 0; i < m; ++i) {
        const float* x = a->data() + size_t(i) * n;
        float ss = 0.f;
        for (int j = 0; j < n; ++j) ss += x[j] * x[j];
        const float r = 1.f / std::sqrt(ss / float(n) + eps);
        inv_rms[size_t(i)] = r;
        for (int j = 0; j < n; ++j) out->data()[size_t(i) * n + j] = x[j] * r * gain->data()[j];
    }
    return finish(out, {a, gain}, [a, gain, out, m, n, inv_rms = std::move(inv_rms)] {
        for (int i = 0; i < m; ++i) {
            const float* x = a->data() + size_t(i) * n;
            const float* go = out->grad.data() + size_t(i) * n;
            const float r = inv_rms[size_t(i)];
            if (gain->requires_grad) {
                gain->ensure_grad();
                for (int j = 0; j < n; ++j) gain->grad[size_t(j)] += go[j] * x[j] * r;
            }
            if (a->requires_grad) {
                a->ensure_grad();
                // y_j = x_j * r * g_j, r = (mean(x^2)+eps)^-1/2
                float dot = 0.f;
                for (int j = 0; j < n; ++j) dot += go[j] * gain->data()[j] * x[j];
                const float coef = dot * r * r * r / float(n);
                float* ga = a->grad.data() + size_t(i) * n;
                for (int j = 0; j < n; ++j) ga[j] += go[j] * gain->data()[j] * r - coef * x[j];
            }
        }
    });
}

TensorPtr embedding_rows(const TensorPtr& table, std::span<const int> ids) {
    check_2d(table, "embedding_rows");
    const int n = table->cols();
    const int m = int(ids.size());
    auto out = tensor({m, n});
    std::vector<int> idx(ids.begin(), ids.end());
    for (int i = 0; i < m; ++i) {
        if (idx[size_t(i)] < 0 || idx[size_t(i)] >= table->rows()) {
            throw std::out_of_range("embedding_rows: id out of range");
        }
        std::copy_n(table->data() + size_t(idx[size_t(i)]) * n, n, out->data() + size_t(i) * n);
    }
    return finish(out, {table}, [table, out, idx = std::move(idx), m, n] {
        if (!table->requires_grad) return;
        table->ensure_grad();
        for (int i = 0; i < m; ++i) {
            float* dst = table->grad.data() + size_t(idx[size_t(i)]) * n;
            const float* src = out->grad.data() + size_t(i) * n;
            for (int j = 0; j < n; ++j) dst[j] += src[j];
        }
    });
}

TensorPtr concat_rows(const std::vector<TensorPtr>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: no parts");
    const int n = parts[0]->cols();
    int m = 0;
    for (const auto& p : parts) {
        check_2d(p, "concat_rows");
        if (p->cols() != n) throw std::invalid_argument("concat_rows: col mismatch");
        m += p->rows();
    }
    auto out = tensor({m, n});
    int row = 0;
    for (const auto& p : parts) {
        std::copy_n(p->data(), p->size(), out->data() + size_t(row) * n);
        row += p->rows();
    }
    return finish(out, parts, [parts, out, n] {
        int row = 0;
        for (const auto& p : parts) {
            if (p->requires_grad) {
                p->ensure_grad();
                const float* src = out->grad.data() + size_t(row) * n;
                for (size_t i = 0; i < p->size(); ++i) p->grad[i] += src[i];
            }
            row += p->rows();
        }
    });
}

TensorPtr concat_cols(const std::vector<TensorPtr>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
    const int m = parts[0]->rows();
    int n = 0;
    for (const auto& p : parts) {
        check_2d(p, "concat_cols");
        if (p->rows() != m) throw std::invalid_argument("concat_cols: row mismatch");
        n += p->cols();
    }
    auto out = tensor({m, n});
    int col = 0;
    for (const auto& p : parts) {
        const int pc = p->cols();
        for (int i = 0; i < m; ++i) {
            std::copy_n(p->data() + size_t(i) * pc, pc, out->data() + size_t(i) * n + col);
        }
        col += pc;
    }
    return finish(out, parts, [parts, out, m, n] {
        int col = 0;
        for (const auto& p : parts) {
            const int pc = p->cols();
            if (p->requires_grad) {
                p->ensure_grad();
                for (int i = 0; i < m; ++i) {
                    const float* src = out->grad.data() + size_t(i) * n + col;
                    float* dst = p->grad.data() + size_t(i) * pc;
                    for (int j = 0; j < pc; ++j) dst[j] += src[j];
                }
            }
            col += pc;
        }
    });
}

TensorPtr slice_cols(const TensorPtr& a, int col0, int len) {
    check_2d(a, "slice_cols");
    const int m = a->rows(), n = a->cols();
    if (col0 < 0 || len < 0 || col0 + len > n) throw std::out_of_range("slice_cols: bad range");
    auto out = tensor({m, len});
    for (int i = 0; i < m; ++i) {
        std::copy_n(a->data() + size_t(i) * n + col0, len, out->data() + size_t(i) * len);
    }
    return finish(out, {a}, [a, out, col0, len, m, n] {
        if (!a->requires_grad) return;
        a->ensure_grad();
        for (int i = 0; i < m; ++i) {
            const float* src = out->grad.data() + size_t(i) * len;
            float* dst = a->grad.data() + size_t(i) * n + col0;
            for (int j = 0; j < len; ++j) dst[j] += src[j];
        }
    });
}

TensorPtr sum(const TensorPtr& a) {
    auto out = tensor({1});
    float acc = 0.f;
    for (size_t i = 0; i < a->size(); ++i) acc += a->data()[i];
    out->data()[0] = acc;
    return finish(out, {a}, [a, out] {
        if (!a->requires_grad) return;
        a->ensure_grad();
        const float g = out->grad[0];
        for (size_t i = 0; i < a->size(); ++i) a->grad[i] += g;
    });
}

TensorPtr rope(const TensorPtr& a, std::span<const float> angles) {
    check_2d(a, "rope");
    const int m = a->rows(), n = a->cols();
    if (n % 2 != 0) throw std::invalid_argument("rope: odd column count");
    const int pairs = n / 2;
    if (int(angles.size()) != m * pairs) throw std::invalid_argument("rope: angle table size mismatch");
    auto out = tensor({m, n});
    for (int i = 0; i < m; ++i) {
        const float* x = a->data() + size_t(i) * n;
        float* y = out->data() + size_t(i) * n;
        const float* ang = angles.data() + size_t(i) * pairs;
        for (int j = 0; j < pairs; ++j) {
            const float c = std::cos(ang[j]), s = std::sin(ang[j]);
            y[2 * j] = x[2 * j] * c - x[2 * j + 1] * s;
            y[2 * j + 1] = x[2 * j] * s + x[2 * j + 1] * c;
        }
    }
    std::vector<float> saved(angles.begin(), angles.end());
    return finish(out, {a}, [a, out, saved = std::move(saved), m, n, pairs] {
        if (!a->requires_grad) return;
        a->ensure_grad();
        // rotation is orthogonal: grad_x = R(-theta) grad_y
        for (int i = 0; i < m; ++i) {
            const float* gy = out->grad.data() + size_t(i) * n;
            float* gx = a->grad.data() + size_t(i) * n;
            const float* ang = saved.data() + size_t(i) * pairs;
            for (int j = 0; j < pairs; ++j) {
                const float c = std::cos(ang[j]), s = std::sin(ang[j]);
                gx[2 * j] += gy[2 * j] * c + gy[2 * j + 1] * s;
                gx[2 * j + 1] += -gy[2 * j] * s + gy[2 * j + 1] * c;
            }
        }
    });
}

TensorPtr masked_softmax(const TensorPtr& scores, const BoolMatrix* mask) {
    check_2d(scores, "masked_softmax");
    const int m = scores->rows(), n = scores->cols();
    if (mask && (mask->rows != m || mask->cols != n)) {
        throw std::invalid_argument("masked_softmax: mask shape mismatch");
    }
    constexpr float kNegInf = -1e9f;
    auto out = tensor({m, n});
    for (int i = 0; i < m; ++i) {
        const float* x = scores->data() + size_t(i) * n;
        float* y = out->data() + size_t(i) * n;
        float mx = kNegInf;
        bool any = false;
        for (int j = 0; j < n; ++j) {
            const bool ok = !mask || mask->at(i, j);
            const float v = ok ? x[j] : kNegInf;
            any = any || ok;
            mx = std::max(mx, v);
        }
        if (!any) throw std::invalid_argument("masked_softmax: row with no permitted column");
        float denom = 0.f;
        for (int j = 0; j < n; ++j) {
            const bool ok = !mask || mask->at(i, j);
            y[j] = ok ? std::exp(x[j] - mx) : 0.f;  // forbidden entries exactly 0
            denom += y[j];
        }
        const float inv = 1.f / denom;
        for (int j = 0; j < n; ++j) y[j] *= inv;
    }
    return finish(out, {scores}, [scores, out, m, n] {
        if (!scores->requires_grad) return;
        scores->ensure_grad();
        for (int i = 0; i < m; ++i) {
            const float* w = out->data() + size_t(i) * n;
            const float* gy = out->grad.data() + size_t(i) * n;
            float* gx = scores->grad.data() + size_t(i) * n;
            float dot = 0.f;
            for (int j = 0; j < n; ++j) dot += gy[j] * w[j];
            for (int j = 0; j < n; ++j) gx[j] += w[j] * (gy[j] - dot);
        }
    });
}

TensorPtr cross_entropy_rows(const TensorPtr& logits, std::span<const int> targets,
                             std::span<const float> row_weights) {
    check_2d(logits, "cross_entropy_rows");
    const int m = logits->rows(), n = logits->cols();
    if (int(targets.size()) != m || int(row_weights.size()) != m) {
        throw std::invalid_argument("cross_entropy_rows: rows mismatch");
    }
    float wsum = 0.f;
    for (float w : row_weights) wsum += w;
    if (wsum <= 0.f) throw std::invalid_argument("cross_entropy_rows: no supervised rows");

    std::vector<int> tgt(targets.begin(), targets.end());
    std::vector<float> wts(row_weights.begin(), row_weights.end());
    double acc = 0.0;
    std::vector<float> lse(size_t(m)), mx(size_t(m));
    for (int i = 0; i < m; ++i) {
        if (tgt[size_t(i)] < 0 || tgt[size_t(i)] >= n) {
            throw std::out_of_range("cross_entropy_rows: target out of vocab");
        }
        const float* z = logits->data() + size_t(i) * n;
        float rmax = z[0];
        for (int j = 1; j < n; ++j) rmax = std::max(rmax, z[j]);
        float denom = 0.f;
        for (int j = 0; j < n; ++j) denom += std::exp(z[j] - rmax);
        mx[size_t(i)] = rmax;
        lse[size_t(i)] = rmax + std::log(denom);
        acc += double(wts[size_t(i)]) * double(lse[size_t(i)] - z[tgt[size_t(i)]]);
    }
    auto out = tensor({1});
    out->data()[0] = float(acc / double(wsum));
    return finish(out, {logits},
                  [logits, out, tgt = std::move(tgt), wts = std::move(wts), lse = std::move(lse),
                   wsum, m, n] {
                      if (!logits->requires_grad) return;
                      logits->ensure_grad();
                      const float g = out->grad[0];
                      for (int i = 0; i < m; ++i) {
                          const float w = wts[size_t(i)] / wsum;
                          if (w == 0.f) continue;
                          const float* z = logits->data() + size_t(i) * n;
                          float* gz = logits->grad.data() + size_t(i) * n;
                          for (int j = 0; j < n; ++j) {
                              const float p = std::exp(z[j] - lse[size_t(i)]);
                              gz[j] += g * w * (p - (j == tgt[size_t(i)] ? 1.f : 0.f));
                          }
                      }
                  });
}

void backward(const TensorPtr& loss) {
    if (loss->size() != 1) throw std::invalid_argument("backward: loss must be scalar");
    if (!loss->requires_grad) throw std::invalid_argument("backward: loss does not require grad");

    // Creation order is a topological order for define-by-run graphs.
    std::vector<Tensor*> nodes;
    std::unordered_set<Tensor*> seen;
    std::vector<Tensor*> stack{loss.get()};
    seen.insert(loss.get());
    while (!stack.empty()) {
        Tensor* t = stack.back();
        stack.pop_back();
        nodes.push_back(t);
        for (const auto& p : t->parents) {
            if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
        }
    }
    std::sort(nodes.begin(), nodes.end(),
              [](const Tensor* a, const Tensor* b) { return a->seq > b->seq; });

    loss->ensure_grad();
    loss->grad[0] += 1.f;
    for (Tensor* t : nodes) {
        if (t->backward_fn && !t->grad.empty()) t->backward_fn();
    }
}

AdamState make_adam(const std::vector<TensorPtr>& params, AdamConfig cfg) {
    AdamState st;
    st.cfg = cfg;
    for (const auto& p : params) {
        st.m.emplace_back(p->size(), 0.f);
        st.v.emplace_back(p->size(), 0.f);
    }
    return st;
}

void adam_step(const std::vector<TensorPtr>& params, AdamState& state) {
    if (params.size() != state.m.size()) throw std::invalid_argument("adam_step: state mismatch");
    state.step += 1;
    const float b1 = state.cfg.beta1, b2 = state.cfg.beta2;
    const float bias1 = 1.f - std::pow(b1, float(state.step));
    const float bias2 = 1.f - std::pow(b2, float(state.step));
    for (size_t pi = 0; pi < params.size(); ++pi) {
        Tensor& p = *params[pi];
        p.ensure_grad();
        auto& m = state.m[pi];
        auto& v = state.v[pi];
        for (size_t i = 0; i < p.size(); ++i) {
            const float g = p.grad[i];
            m[i] = b1 * m[i] + (1.f - b1) * g;
            v[i] = b2 * v[i] + (1.f - b2) * g * g;
            const float mh = m[i] / bias1;
            const float vh = v[i] / bias2;
            p.data()[i] -= state.cfg.lr * mh / (std::sqrt(vh) + state.cfg.eps);
        }
    }
}

void zero_grads(const std::vector<TensorPtr>& params) {
    for (const auto& p : params) {
        p->ensure_grad();
        p->zero_grad();
    }
}

}  // namespace sar

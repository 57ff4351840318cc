// Minimal define-by-run reverse-mode autodiff over fp32 matrices: the only
// floating-point kernels in the project. Graphs are rebuilt per step; nodes
// are freed when the last handle drops.
#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "sar/masks.hpp"

namespace sar {

struct Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

struct Tensor {
    std::vector<int> shape;                   // {rows, cols} or {1} for scalars
    std::shared_ptr<std::vector<float>> val;  // shared so leaf views can alias storage
    std::vector<float> grad;                  // allocated lazily, same length as val
    bool requires_grad = false;
    uint64_t seq = 0;  // creation order; creation order is a topological order
    std::vector<TensorPtr> parents;
    std::function<void()> backward_fn;

    int rows() const { return shape.empty() ? 0 : shape[0]; }
    int cols() const { return shape.size() > 1 ? shape[1] : 1; }
    size_t size() const { return val->size(); }
    float* data() { return val->data(); }
    const float* data() const { return val->data(); }
    float item() const;       // scalar value; throws if not size 1
    void ensure_grad();       // allocate zeroed grad buffer
    void zero_grad();
};

/// Zero-filled tensor.
TensorPtr tensor(std::vector<int> shape, bool requires_grad = false);
/// Tensor initialized from data (size must match the shape).
TensorPtr tensor(std::vector<int> shape, std::vector<float> data, bool requires_grad = false);
/// Leaf sharing the parameter's value storage but with its own grad buffer.
/// Used for race-free per-item gradient accumulation in batched training.
TensorPtr param_view(const TensorPtr& param);

/// Thread-local autograd switch; inference paths disable graph building.
bool grad_enabled();
struct NoGrad {
    NoGrad();
    ~NoGrad();
    bool prev;
};

// ---- differentiable ops ----
TensorPtr matmul(const TensorPtr& a, const TensorPtr& b);     // (m,k)x(k,n)
TensorPtr matmul_nt(const TensorPtr& a, const TensorPtr& b);  // (m,k)x(n,k)^T
TensorPtr add(const TensorPtr& a, const TensorPtr& b);
TensorPtr add_rowvec(const TensorPtr& a, const TensorPtr& v);  // v is {1,n}
TensorPtr mul(const TensorPtr& a, const TensorPtr& b);
TensorPtr scale(const TensorPtr& a, float c);
TensorPtr silu(const TensorPtr& a);
TensorPtr rmsnorm(const TensorPtr& a, const TensorPtr& gain, float eps = 1e-5f);
TensorPtr embedding_rows(const TensorPtr& table, std::span<const int> ids);
TensorPtr concat_rows(const std::vector<TensorPtr>& parts);
TensorPtr concat_cols(const std::vector<TensorPtr>& parts);
TensorPtr slice_cols(const TensorPtr& a, int col0, int len);
TensorPtr sum(const TensorPtr& a);

/// Rotates column pairs (2j, 2j+1) of each row by angles[row][j];
/// angles has rows*cols/2 entries and is a constant.
TensorPtr rope(const TensorPtr& a, std::span<const float> angles);

/// Row softmax with forbidden entries forced to -1e9 pre-softmax and exactly
/// zero post-softmax. mask == nullptr means all permitted. Throws on a row
/// with no permitted column.
TensorPtr masked_softmax(const TensorPtr& scores, const BoolMatrix* mask);

/// Mean over rows with weight 1 of -log softmax(logits)[target].
/// row_weights entries are 0 or 1; throws if all are 0.
TensorPtr cross_entropy_rows(const TensorPtr& logits, std::span<const int> targets,
                             std::span<const float> row_weights);

/// Accumulates gradients of a scalar loss into every reachable
/// requires_grad tensor.
void backward(const TensorPtr& loss);

// ---- optimizer ----
struct AdamConfig {
    float lr = 1e-3f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
};

struct AdamState {
    AdamConfig cfg;
    int64_t step = 0;
    std::vector<std::vector<float>> m;  // first moments, aligned with the param list
    std::vector<std::vector<float>> v;  // second moments
};

AdamState make_adam(const std::vector<TensorPtr>& params, AdamConfig cfg);
void adam_step(const std::vector<TensorPtr>& params, AdamState& state);
void zero_grads(const std::vector<TensorPtr>& params);

}  // namespace sar

// Fully Masked Transformer: an encoder over seen tokens and a decoder over
// positional queries, with permission masks at all three attention sites.
// The decoder input carries no token content, only position embeddings, so
// set-wise prediction cannot leak values through the query path.
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "sar/masks.hpp"
#include "sar/rng.hpp"
#include "sar/schedule.hpp"
#include "sar/tensor.hpp"

namespace sar {

enum class PosEmbedKind { sine, learned };

struct FMTConfig {
    int enc_layers = 2;
    int dec_layers = 2;
    int width = 64;
    int heads = 4;
    int vocab = 8;
    int num_classes = 4;  // class ids 0..num_classes-1; id num_classes is the null class
    GridShape grid{4, 4};
    PosEmbedKind pos_embed = PosEmbedKind::sine;

    int head_dim() const { return width / heads; }
    int ffn_hidden() const;  // 8/3 * width, rounded to a multiple of 8
    int null_class() const { return num_classes; }
    void validate() const;

    nlohmann::json to_json() const;
    static FMTConfig from_json(const nlohmann::json& j);
};

struct AttnWeights {
    TensorPtr wq, wk, wv, wo;  // each width x width
};

struct FFNWeights {
    TensorPtr gate, up, down;
};

struct EncoderLayer {
    TensorPtr attn_norm_g;
    AttnWeights attn;
    TensorPtr ffn_norm_g;
    FFNWeights ffn;
};

struct DecoderLayer {
    TensorPtr self_norm_g;
    AttnWeights self_attn;
    TensorPtr cross_norm_g;
    AttnWeights cross_attn;
    TensorPtr ffn_norm_g;
    FFNWeights ffn;
};

struct FMTParams {
    FMTConfig config;
    TensorPtr token_embed;  // vocab x width
    TensorPtr class_embed;  // (num_classes+1) x width
    TensorPtr pos_table;    // learned: N x width; null when pos_embed == sine
    TensorPtr pos_sine;     // constant sine table, N x width
    std::vector<EncoderLayer> encoder;
    std::vector<DecoderLayer> decoder;
    TensorPtr enc_norm_g;
    TensorPtr dec_norm_g;
    TensorPtr head_w;  // width x vocab
    TensorPtr head_b;  // 1 x vocab, zero-init

    /// Trainable tensors in registry order (checkpoint / optimizer order).
    std::vector<std::pair<std::string, TensorPtr>> named;
    std::vector<TensorPtr> parameters() const;
};

/// Truncated-normal(0.02) weights, unit norm gains, zero head bias;
/// bitwise deterministic per seed.
FMTParams init_params(const FMTConfig& config, Rng& rng);

/// Structural copy whose tensors alias the base values but own private grad
/// buffers; lets batch items accumulate gradients race-free.
FMTParams grad_view(const FMTParams& base);
void zero_view_grads(FMTParams& view);
/// base.grad += view.grad, in registry order.
void accumulate_grads(FMTParams& base, const FMTParams& view);

// ---- rotary tables ----
/// Per-grid-position rotation angles; axial 2D (half the pair slots follow
/// the row coordinate, half the column), identical across heads.
struct RopeTable {
    int width = 0;
    int pairs = 0;              // width / 2 angles per position
    std::vector<float> rows;    // N x pairs
};

RopeTable make_rope_table(const FMTConfig& config);
/// Gathers angle rows for grid positions; -1 selects the null (condition)
/// position and yields all-zero angles.
std::vector<float> rope_angles_for(const RopeTable& table, std::span<const int> grid_positions);
/// Angle rows indexed by causal step t of the order (row t = position perm[t]).
std::vector<float> rope_table_for_order(const RopeTable& table, const SequenceOrder& order);

/// Decoder query embeddings for the given grid positions.
TensorPtr pos_embed_rows(const FMTParams& params, std::span<const int> grid_positions);

/// Multiply-accumulate counter over attention-layer work (q/k/v/out
/// projections plus score and value-mix inner products).
struct AttnCounter {
    uint64_t macs = 0;
};

struct ForwardTrace {
    TensorPtr enc_token_rows;  // embedding activations of the seen tokens
    TensorPtr enc_input;       // condition row followed by the token rows
    TensorPtr enc_out;
};

/// Shared forward: encoder over [condition | seen_tokens], decoder rows
/// [0, dec_rows). Masks are sliced to the prefix, which is exact because
/// permitted columns always form a prefix. Returns logits (dec_rows x vocab).
TensorPtr fmt_forward_core(const FMTParams& params, const SetPlan& plan,
                           const GeneralizedCausalMasks& masks,
                           std::span<const int> seen_ordered_tokens, int class_id, int dec_rows,
                           AttnCounter* counter = nullptr, ForwardTrace* trace = nullptr);

/// Training forward: seen tokens are the rearranged sequence minus the last
/// set; logits row t predicts ordered token t.
TensorPtr fmt_forward_train(const FMTParams& params, const SetPlan& plan,
                            const GeneralizedCausalMasks& masks,
                            std::span<const int> seen_ordered_tokens, int class_id,
                            AttnCounter* counter = nullptr, ForwardTrace* trace = nullptr);

// ---- incremental decoding ----
struct LayerKV {
    TensorPtr k;  // may be null before the first append
    TensorPtr v;
};

struct KVCache {
    SetPlan plan;
    int class_id = 0;
    int committed_sets = 0;  // forward_step calls completed
    std::vector<LayerKV> enc_self;    // per encoder layer
    TensorPtr enc_out;                // committed encoder output rows
    std::vector<LayerKV> dec_cross;   // per decoder layer, projections of enc_out
    std::vector<LayerKV> dec_self;    // per decoder layer
    int enc_len = 0;
    int dec_len = 0;
};

KVCache make_kv_cache(const SetPlan& plan, int class_id);

/// One set-wise step: commits new_seen_tokens (the previous set's tokens; the
/// condition token at step 0, where new_seen_tokens must be empty) to the
/// encoder stream, then decodes logits for set set_index. Throws if
/// set_index is out of sync with the cache.
TensorPtr fmt_forward_step(const FMTParams& params, KVCache& cache,
                           std::span<const int> new_seen_tokens, int set_index,
                           AttnCounter* counter = nullptr);

}  // namespace sar

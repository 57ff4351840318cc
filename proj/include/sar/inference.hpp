// Set-wise generation: sampling controls, classifier-free guidance, KV-cache
// and full-recompute paths, zero-shot painting, and the attention-cost bench.
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "sar/fmt.hpp"
#include "sar/rng.hpp"
#include "sar/schedule.hpp"
#include "sar/synthdata.hpp"
#include "sar/types.hpp"

namespace sar {

struct SamplerConfig {
    float temperature = 1.0f;  // < 1e-6 means greedy argmax
    int top_k = 0;             // 0 = all
    float top_p = 1.0f;        // in (0, 1]
    float cfg_scale = 1.0f;    // 1 = guidance disabled
    uint64_t seed = 0;

    void validate() const;
};

/// Temperature, top-k, then nucleus filtering, then a categorical draw.
int sample_logits(std::span<const float> logits_row, const SamplerConfig& sampler, Rng& rng);

/// uncond + scale * (cond - uncond), elementwise.
std::vector<float> cfg_combine(std::span<const float> cond_logits,
                               std::span<const float> uncond_logits, float scale);

struct GenerateStats {
    AttnCounter attn;                    // summed over sets (and CFG streams)
    std::vector<uint64_t> per_set_macs;  // per set, condition step folded into set 0
};

/// Set-by-set generation. With use_cache the encoder/decoder K,V of
/// committed sets are reused; without it every step recomputes the prefix.
/// preset_first_set, when given, supplies set 0 verbatim (painting).
TokenGrid generate(const FMTParams& params, int class_id, const SetPlan& plan,
                   const SamplerConfig& sampler, bool use_cache, Rng& rng,
                   GenerateStats* stats = nullptr,
                   const std::vector<int>* preset_first_set = nullptr);

struct PaintSpec {
    std::map<int, int> known;  // grid position -> token id
    int sets_for_unknown = 8;  // unknown region is split into this many sets

    void validate(GridShape shape, int vocab) const;
};

/// Zero-shot painting: known positions become one leading seen set, unknown
/// positions follow in random order split by a cosine schedule. Known tokens
/// pass through unchanged. Warns to stderr unless the model reports
/// random-order training (cross-order generalization is poor otherwise).
TokenGrid paint(const FMTParams& params, int class_id, const PaintSpec& spec,
                const SamplerConfig& sampler, Rng& rng, bool trained_random_order = true);

struct BenchResult {
    bool cached = false;
    uint64_t attention_macs = 0;
    double wall_seconds = 0.0;
    std::vector<uint64_t> per_set_macs;
};

/// Instrumented generation; op counts are deterministic, wall time is
/// informational.
BenchResult bench(const FMTParams& params, const SetPlan& plan, bool use_cache, uint64_t seed = 0);

/// Closed-form attention MAC counts for a plan (the independent oracle the
/// runtime counters are checked against).
uint64_t expected_attn_macs(const FMTConfig& config, const OutputIntervals& intervals, bool cached);

}  // namespace sar

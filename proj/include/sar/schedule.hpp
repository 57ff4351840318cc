// Sequence orders and output intervals: the (order, intervals) pair decides
// which grid positions are emitted at which generation step and how many
// tokens each step outputs.
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sar/rng.hpp"
#include "sar/types.hpp"

namespace sar {

enum class OrderKind {
    raster,
    reversed_raster,
    roll,
    reversed_roll,
    fixed_random,
    random,
    next_scale,
    custom,
};

const char* order_kind_name(OrderKind k);
OrderKind order_kind_from_name(const std::string& name);

/// A bijection on grid indices. perm[t] is the grid position visited at
/// causal step t; inv is its inverse (inv[perm[t]] == t).
struct SequenceOrder {
    OrderKind kind = OrderKind::raster;
    std::vector<int> perm;
    std::vector<int> inv;
    uint64_t seed = 0;  // meaningful for fixed_random / random draws

    int length() const { return int(perm.size()); }
    void validate() const;  // throws if perm is not a bijection or inv mismatches
};

/// Sizes n_1..n_K of the K output sets; zero sizes are allowed (random
/// schedule) and contribute no rows anywhere downstream.
struct OutputIntervals {
    std::vector<int> sizes;

    int count() const { return int(sizes.size()); }
    int total() const;
    /// offset(k) = sum of sizes before set k (0-based).
    int offset(int k) const;
    void validate(int expected_total) const;
};

/// Order + intervals + the supervision flag: everything a training or
/// generation pass needs to know about sequencing.
struct SetPlan {
    SequenceOrder order;
    OutputIntervals intervals;
    bool supervise_first_set = true;

    GridShape grid;

    int num_sets() const { return intervals.count(); }
    void validate() const;
    /// 1-based set id of causal step t (empty sets are skipped).
    int set_of_step(int t) const;
};

// ---- orders ----
SequenceOrder raster_order(GridShape shape);
SequenceOrder reversed_raster_order(GridShape shape);
/// Clockwise spiral from the top-left corner; reversed=true walks it backwards.
SequenceOrder roll_order(GridShape shape, bool reversed);
SequenceOrder random_order(GridShape shape, Rng& rng);
/// random_order with a persisted seed so the draw can be reproduced.
SequenceOrder fixed_random_order(GridShape shape, uint64_t seed);
SequenceOrder custom_order(GridShape shape, std::vector<int> perm);
SequenceOrder make_order(OrderKind kind, GridShape shape, uint64_t seed);

// ---- intervals ----
/// Cosine schedule: raw_i = round(N*(cos(pi/2*(i-1)/K) - cos(pi/2*i/K))),
/// clamped to >= 1; the last set absorbs the residue so the sum is N.
OutputIntervals cosine_intervals(int total, int num_sets);
/// The rounded+clamped sizes before residue adjustment (exposed for tests).
std::vector<int> cosine_intervals_raw(int total, int num_sets);
/// K-1 iid uniform cut points in [0, N]; sizes are consecutive differences
/// (zeros permitted).
OutputIntervals random_intervals(int total, int num_sets, Rng& rng);

// ---- plans ----
/// Coarse-to-fine plan: one set per power-of-two downsampling scale (center
/// sampling), then the remaining positions. Requires a square power-of-two
/// grid with side >= 4.
SetPlan next_scale_plan(GridShape shape);
/// MAR-style plan: random order, two sets with the second covering a masking
/// ratio drawn from [ratio_low, ratio_high], first set unsupervised.
SetPlan mar_plan(GridShape shape, double ratio_low, double ratio_high, Rng& rng);
SetPlan make_plan(SequenceOrder order, OutputIntervals intervals, GridShape shape,
                  bool supervise_first_set = true);

// ---- rearrange / scatter ----
/// out[t] = in[perm[t]].
std::vector<int> rearrange(std::span<const int> grid_tokens, const SequenceOrder& order);
/// Writes new_tokens into the grid positions of set set_index (0-based).
void scatter(std::vector<int>& out_grid, std::span<const int> new_tokens,
             const SetPlan& plan, int set_index);

// ---- serialization ----
std::string plan_to_json(const SetPlan& plan);
SetPlan plan_from_json(const std::string& text);

}  // namespace sar

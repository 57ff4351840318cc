#include "sar/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "json.hpp"

namespace sar {

const char* order_kind_name(OrderKind k) {
    switch (k) {
        case OrderKind::raster: return "raster";
        case OrderKind::reversed_raster: return "reversed-raster";
        case OrderKind::roll: return "roll";
        case OrderKind::reversed_roll: return "reversed-roll";
        case OrderKind::fixed_random: return "fixed-random";
        case OrderKind::random: return "random";
        case OrderKind::next_scale: return "next-scale";
        case OrderKind::custom: return "custom";
    }
    return "?";
}

OrderKind order_kind_from_name(const std::string& name) {
    for (OrderKind k : {OrderKind::raster, OrderKind::reversed_raster, OrderKind::roll,
                        OrderKind::reversed_roll, OrderKind::fixed_random, OrderKind::random,
                        OrderKind::next_scale, OrderKind::custom}) {
        if (name == order_kind_name(k)) return k;
    }
    throw std::invalid_argument("unknown order kind: " + name);
}

void SequenceOrder::validate() const {
    const int n = length();
    if (int(inv.size()) != n) throw std::invalid_argument("order: inv size mismatch");
    std::vector<char> seen(n, 0);
    for (int t = 0; t < n; ++t) {
        const int p = perm[t];
        if (p < 0 || p >= n || seen[p]) throw std::invalid_argument("order: perm is not a bijection");
        seen[p] = 1;
        if (inv[p] != t) throw std::invalid_argument("order: inv[perm[t]] != t");
    }
}

int OutputIntervals::total() const { return std::accumulate(sizes.begin(), sizes.end(), 0); }

int OutputIntervals::offset(int k) const {
    int off = 0;
    for (int i = 0; i < k; ++i) off += sizes[i];
    return off;
}

void OutputIntervals::validate(int expected_total) const {
    if (sizes.empty()) throw std::invalid_argument("intervals: empty");
    for (int s : sizes)
        if (s < 0) throw std::invalid_argument("intervals: negative size");
    if (total() != expected_total) throw std::invalid_argument("intervals: sum != N");
}

void SetPlan::validate() const {
    grid.validate();
    if (order.length() != grid.size()) throw std::invalid_argument("plan: order length != N");
    order.validate();
    intervals.validate(grid.size());
    if (!supervise_first_set && intervals.count() < 2) {
        throw std::invalid_argument("plan: unsupervised first set requires K >= 2");
    }
}

int SetPlan::set_of_step(int t) const {
    int off = 0;
    for (int k = 0; k < intervals.count(); ++k) {
        off += intervals.sizes[k];
        if (t < off) return k + 1;
    }
    throw std::out_of_range("set_of_step: step out of range");
}

static std::vector<int> inverse_of(const std::vector<int>& perm) {
    std::vector<int> inv(perm.size());
    for (size_t t = 0; t < perm.size(); ++t) inv[size_t(perm[t])] = int(t);
    return inv;
}

static SequenceOrder from_perm(OrderKind kind, std::vector<int> perm, uint64_t seed = 0) {
    SequenceOrder o;
    o.kind = kind;
    o.inv = inverse_of(perm);
    o.perm = std::move(perm);
    o.seed = seed;
    return o;
}

SequenceOrder raster_order(GridShape shape) {
    shape.validate();
    std::vector<int> perm(size_t(shape.size()));
    std::iota(perm.begin(), perm.end(), 0);
    return from_perm(OrderKind::raster, std::move(perm));
}

SequenceOrder reversed_raster_order(GridShape shape) {
    shape.validate();
    const int n = shape.size();
    std::vector<int> perm(size_t(n));
    for (int t = 0; t < n; ++t) perm[size_t(t)] = n - 1 - t;
    return from_perm(OrderKind::reversed_raster, std::move(perm));
}

SequenceOrder roll_order(GridShape shape, bool reversed) {
    shape.validate();
    const int h = shape.height, w = shape.width;
    std::vector<int> perm;
    perm.reserve(size_t(h) * size_t(w));
    int top = 0, bottom = h - 1, left = 0, right = w - 1;
    while (top <= bottom && left <= right) {
        for (int c = left; c <= right; ++c) perm.push_back(top * w + c);
        for (int r = top + 1; r <= bottom; ++r) perm.push_back(r * w + right);
        if (top < bottom) {
            for (int c = right - 1; c >= left; --c) perm.push_back(bottom * w + c);
        }
        if (left < right) {
            for (int r = bottom - 1; r > top; --r) perm.push_back(r * w + left);
        }
        ++top;
        --bottom;
        ++left;
        --right;
    }
    if (reversed) std::reverse(perm.begin(), perm.end());
    return from_perm(reversed ? OrderKind::reversed_roll : OrderKind::roll, std::move(perm));
}

SequenceOrder random_order(GridShape shape, Rng& rng) {
    shape.validate();
    std::vector<int> perm(size_t(shape.size()));
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    return from_perm(OrderKind::random, std::move(perm));
}

SequenceOrder fixed_random_order(GridShape shape, uint64_t seed) {
    Rng rng(seed);
    SequenceOrder o = random_order(shape, rng);
    o.kind = OrderKind::fixed_random;
    o.seed = seed;
    return o;
}

SequenceOrder custom_order(GridShape shape, std::vector<int> perm) {
    shape.validate();
    if (int(perm.size()) != shape.size()) throw std::invalid_argument("custom_order: length != N");
    SequenceOrder o = from_perm(OrderKind::custom, std::move(perm));
    o.validate();
    return o;
}

SequenceOrder make_order(OrderKind kind, GridShape shape, uint64_t seed) {
    switch (kind) {
        case OrderKind::raster: return raster_order(shape);
        case OrderKind::reversed_raster: return reversed_raster_order(shape);
        case OrderKind::roll: return roll_order(shape, false);
        case OrderKind::reversed_roll: return roll_order(shape, true);
        case OrderKind::fixed_random: return fixed_random_order(shape, seed);
        case OrderKind::random: {
            SequenceOrder o = fixed_random_order(shape, seed);
            o.kind = OrderKind::random;
            return o;
        }
        default: throw std::invalid_argument("make_order: kind needs dedicated constructor");
    }
}

std::vector<int> cosine_intervals_raw(int total, int num_sets) {
    if (num_sets < 1) throw std::invalid_argument("cosine_intervals: K must be >= 1");
    if (num_sets > total) throw std::invalid_argument("cosine_intervals: infeasible, K > N");
    const double half_pi = 1.57079632679489661923;
    std::vector<int> raw(size_t(num_sets));
    for (int i = 1; i <= num_sets; ++i) {
        const double x = total * (std::cos(half_pi * (i - 1) / num_sets) -
                                  std::cos(half_pi * i / num_sets));
        const int r = int(std::floor(x + 0.5));  // round half up
        raw[size_t(i - 1)] = std::max(1, r);
    }
    return raw;
}

OutputIntervals cosine_intervals(int total, int num_sets) {
    std::vector<int> sizes = cosine_intervals_raw(total, num_sets);
    const int k = num_sets;
    int partial = std::accumulate(sizes.begin(), sizes.end() - 1, 0);
    sizes[size_t(k - 1)] = total - partial;
    // If rounding overshot, pull the residue back from the largest sets.
    while (sizes[size_t(k - 1)] < 1) {
        auto it = std::max_element(sizes.begin(), sizes.end() - 1);
        if (*it <= 1) throw std::logic_error("cosine_intervals: cannot rebalance");
        --*it;
        ++sizes[size_t(k - 1)];
    }
    OutputIntervals out{std::move(sizes)};
    out.validate(total);
    return out;
}

OutputIntervals random_intervals(int total, int num_sets, Rng& rng) {
    if (num_sets < 1) throw std::invalid_argument("random_intervals: K must be >= 1");
    if (num_sets > total + 1) throw std::invalid_argument("random_intervals: infeasible, K > N+1");
    if (num_sets > total) {
        std::fprintf(stderr, "warning: random_intervals with K=%d > N=%d\n", num_sets, total);
    }
    std::vector<int> cuts(size_t(num_sets - 1));
    for (auto& c : cuts) c = int(rng.uniform_int(uint64_t(total) + 1));
    std::sort(cuts.begin(), cuts.end());
    std::vector<int> sizes(size_t(num_sets));
    int prev = 0;
    for (int i = 0; i < num_sets - 1; ++i) {
        sizes[size_t(i)] = cuts[size_t(i)] - prev;
        prev = cuts[size_t(i)];
    }
    sizes[size_t(num_sets - 1)] = total - prev;
    OutputIntervals out{std::move(sizes)};
    out.validate(total);
    return out;
}

SetPlan make_plan(SequenceOrder order, OutputIntervals intervals, GridShape shape,
                  bool supervise_first_set) {
    SetPlan p;
    p.order = std::move(order);
    p.intervals = std::move(intervals);
    p.grid = shape;
    p.supervise_first_set = supervise_first_set;
    p.validate();
    return p;
}

SetPlan next_scale_plan(GridShape shape) {
    shape.validate();
    const int side = shape.height;
    if (shape.width != side || side < 4 || (side & (side - 1)) != 0) {
        throw std::invalid_argument("next_scale_plan: grid must be square power-of-two, side >= 4");
    }
    std::vector<int> perm;
    std::vector<int> sizes;
    std::vector<char> taken(size_t(side) * size_t(side), 0);
    // One set per scale factor side, side/2, ..., 2; center sampling keeps
    // the scales pairwise disjoint.
    for (int factor = side; factor >= 2; factor /= 2) {
        const int m = side / factor;
        int count = 0;
        for (int r = 0; r < m; ++r) {
            for (int c = 0; c < m; ++c) {
                const int rr = int(std::floor((r + 0.5) * factor));
                const int cc = int(std::floor((c + 0.5) * factor));
                const int p = rr * side + cc;
                if (taken[size_t(p)]) throw std::logic_error("next_scale_plan: overlap");
                taken[size_t(p)] = 1;
                perm.push_back(p);
                ++count;
            }
        }
        sizes.push_back(count);
    }
    int rest = 0;
    for (int p = 0; p < side * side; ++p) {
        if (!taken[size_t(p)]) {
            perm.push_back(p);
            ++rest;
        }
    }
    sizes.push_back(rest);
    SequenceOrder order = custom_order(shape, std::move(perm));
    order.kind = OrderKind::next_scale;
    return make_plan(std::move(order), OutputIntervals{std::move(sizes)}, shape);
}

SetPlan mar_plan(GridShape shape, double ratio_low, double ratio_high, Rng& rng) {
    shape.validate();
    if (!(ratio_low > 0.0) || ratio_low > ratio_high || ratio_high > 1.0) {
        throw std::invalid_argument("mar_plan: require 0 < ratio_low <= ratio_high <= 1");
    }
    const int n = shape.size();
    const double r = rng.uniform(ratio_low, ratio_high);
    int masked = int(std::floor(r * n + 0.5));
    masked = std::clamp(masked, 1, n);
    SetPlan p;
    p.order = random_order(shape, rng);
    p.intervals = OutputIntervals{{n - masked, masked}};
    p.grid = shape;
    p.supervise_first_set = false;
    p.validate();
    return p;
}

std::vector<int> rearrange(std::span<const int> grid_tokens, const SequenceOrder& order) {
    if (int(grid_tokens.size()) != order.length()) {
        throw std::invalid_argument("rearrange: token count != order length");
    }
    std::vector<int> out(grid_tokens.size());
    for (int t = 0; t < order.length(); ++t) out[size_t(t)] = grid_tokens[size_t(order.perm[size_t(t)])];
    return out;
}

void scatter(std::vector<int>& out_grid, std::span<const int> new_tokens, const SetPlan& plan,
             int set_index) {
    if (set_index < 0 || set_index >= plan.num_sets()) {
        throw std::out_of_range("scatter: set index out of range");
    }
    const int n_k = plan.intervals.sizes[size_t(set_index)];
    if (int(new_tokens.size()) != n_k) throw std::invalid_argument("scatter: token count != n_k");
    if (int(out_grid.size()) != plan.grid.size()) throw std::invalid_argument("scatter: bad grid");
    const int off = plan.intervals.offset(set_index);
    for (int i = 0; i < n_k; ++i) {
        out_grid[size_t(plan.order.perm[size_t(off + i)])] = new_tokens[size_t(i)];
    }
}

std::string plan_to_json(const SetPlan& plan) {
    nlohmann::json j;
    j["order_kind"] = order_kind_name(plan.order.kind);
    j["seed"] = plan.order.seed;
    j["height"] = plan.grid.height;
    j["width"] = plan.grid.width;
    j["intervals"] = plan.intervals.sizes;
    j["supervise_first_set"] = plan.supervise_first_set;
    if (plan.order.kind == OrderKind::custom || plan.order.kind == OrderKind::next_scale) {
        j["perm"] = plan.order.perm;
    }
    return j.dump();
}

SetPlan plan_from_json(const std::string& text) {
    const nlohmann::json j = nlohmann::json::parse(text);
    GridShape shape{j.at("height").get<int>(), j.at("width").get<int>()};
    const OrderKind kind = order_kind_from_name(j.at("order_kind").get<std::string>());
    SequenceOrder order;
    if (j.contains("perm")) {
        order = custom_order(shape, j.at("perm").get<std::vector<int>>());
        order.kind = kind;
    } else {
        order = make_order(kind, shape, j.at("seed").get<uint64_t>());
    }
    OutputIntervals intervals{j.at("intervals").get<std::vector<int>>()};
    return make_plan(std::move(order), std::move(intervals), shape,
                     j.at("supervise_first_set").get<bool>());
}

}  // namespace sar

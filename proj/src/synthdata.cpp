#include "sar/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "json.hpp"

namespace sar {

void PatternMixtureSource::validate() const {
    shape.validate();
    if (vocab < 2) throw std::invalid_argument("source: vocab must be >= 2");
    if (templates.empty() || weights.empty()) throw std::invalid_argument("source: empty mixture");
    if (flip_prob < 0.0 || flip_prob >= 1.0 + 1e-12) {
        throw std::invalid_argument("source: flip_prob must be in [0, 1]");
    }
    for (const auto& t : templates) {
        if (int(t.size()) != shape.size()) throw std::invalid_argument("source: template size mismatch");
        for (int x : t) {
            if (x < 0 || x >= vocab) throw std::invalid_argument("source: template token out of vocab");
        }
    }
    for (const auto& w : weights) {
        if (w.size() != templates.size()) throw std::invalid_argument("source: weight count mismatch");
        double s = 0.0;
        for (double x : w) {
            if (x < 0.0) throw std::invalid_argument("source: negative weight");
            s += x;
        }
        if (std::fabs(s - 1.0) > 1e-9) throw std::invalid_argument("source: weights must sum to 1");
    }
}

std::string PatternMixtureSource::to_json() const {
    nlohmann::json j;
    j["height"] = shape.height;
    j["width"] = shape.width;
    j["vocab"] = vocab;
    j["flip_prob"] = flip_prob;
    j["templates"] = templates;
    j["weights"] = weights;
    return j.dump();
}

PatternMixtureSource PatternMixtureSource::from_json(const std::string& text) {
    const nlohmann::json j = nlohmann::json::parse(text);
    PatternMixtureSource s;
    s.shape = GridShape{j.at("height").get<int>(), j.at("width").get<int>()};
    s.vocab = j.at("vocab").get<int>();
    s.flip_prob = j.at("flip_prob").get<double>();
    s.templates = j.at("templates").get<std::vector<std::vector<int>>>();
    s.weights = j.at("weights").get<std::vector<std::vector<double>>>();
    s.validate();
    return s;
}

PatternMixtureSource default_desk_source(double anchor) {
    PatternMixtureSource s;
    s.shape = GridShape{4, 4};
    s.vocab = 8;
    s.flip_prob = 0.1;
    const int m = 4;
    // Templates differ at every cell: one clean token narrows the posterior
    // to essentially one template.
    for (int t = 0; t < m; ++t) {
        std::vector<int> grid(16);
        for (int p = 0; p < 16; ++p) grid[size_t(p)] = (p + 2 * t) % 8;
        s.templates.push_back(std::move(grid));
    }
    const double rest = (1.0 - anchor) / (m - 1);
    for (int c = 0; c < m; ++c) {
        std::vector<double> w(size_t(m), rest);
        w[size_t(c)] = anchor;
        s.weights.push_back(std::move(w));
    }
    s.validate();
    return s;
}

PatternMixtureSource enumeration_source() {
    PatternMixtureSource s;
    s.shape = GridShape{2, 2};
    s.vocab = 3;
    s.flip_prob = 0.15;
    s.templates = {{0, 1, 2, 0}, {2, 0, 1, 2}, {1, 2, 0, 1}};
    s.weights = {{0.5, 0.3, 0.2}};
    s.validate();
    return s;
}

PatternMixtureSource uniform_source(GridShape shape, int vocab, int num_classes) {
    PatternMixtureSource s;
    s.shape = shape;
    s.vocab = vocab;
    s.flip_prob = 1.0;  // every token resampled uniformly
    s.templates = {std::vector<int>(size_t(shape.size()), 0)};
    s.weights.assign(size_t(num_classes), {1.0});
    s.validate();
    return s;
}

TokenGrid sample_grid(const PatternMixtureSource& source, int class_id, Rng& rng) {
    if (class_id < 0 || class_id >= source.num_classes()) {
        throw std::out_of_range("sample_grid: class id out of range");
    }
    const auto& w = source.weights[size_t(class_id)];
    double u = rng.uniform01();
    int pick = int(w.size()) - 1;
    for (size_t i = 0; i < w.size(); ++i) {
        u -= w[i];
        if (u < 0) {
            pick = int(i);
            break;
        }
    }
    TokenGrid g;
    g.shape = source.shape;
    g.class_id = class_id;
    g.tokens = source.templates[size_t(pick)];
    for (auto& t : g.tokens) {
        if (rng.uniform01() < source.flip_prob) t = int(rng.uniform_int(uint64_t(source.vocab)));
    }
    return g;
}

double cell_prob(const PatternMixtureSource& source, int token, int template_token) {
    const double base = source.flip_prob / source.vocab;
    return token == template_token ? (1.0 - source.flip_prob) + base : base;
}

double true_joint_logprob(const PatternMixtureSource& source, const TokenGrid& grid, int class_id) {
    if (int(grid.tokens.size()) != source.shape.size()) {
        throw std::invalid_argument("true_joint_logprob: grid size mismatch");
    }
    const auto& w = source.weights[size_t(class_id)];
    // log sum_m w_m prod_p P(token_p | template_m)
    double best = -std::numeric_limits<double>::infinity();
    std::vector<double> logs(w.size(), -std::numeric_limits<double>::infinity());
    for (size_t m = 0; m < w.size(); ++m) {
        if (w[m] == 0.0) continue;
        double lp = std::log(w[m]);
        for (size_t p = 0; p < grid.tokens.size(); ++p) {
            const double pp = cell_prob(source, grid.tokens[p], source.templates[m][p]);
            if (pp == 0.0) {
                lp = -std::numeric_limits<double>::infinity();
                break;
            }
            lp += std::log(pp);
        }
        logs[m] = lp;
        best = std::max(best, lp);
    }
    if (!std::isfinite(best)) return -std::numeric_limits<double>::infinity();
    double acc = 0.0;
    for (double lp : logs) {
        if (std::isfinite(lp)) acc += std::exp(lp - best);
    }
    return best + std::log(acc);
}

double model_nll_per_token(const FMTParams& params, const TokenGrid& grid, const SetPlan& plan) {
    NoGrad ng;
    if (grid.shape != plan.grid) throw std::invalid_argument("model_nll: grid/plan shape mismatch");
    const auto masks = gen_masks(plan);
    const std::vector<int> ordered = rearrange(grid.tokens, plan.order);
    const int n = plan.grid.size();
    const int n_last = plan.intervals.sizes.back();
    const std::vector<int> seen(ordered.begin(), ordered.end() - n_last);
    const TensorPtr logits = fmt_forward_train(params, plan, masks, seen, grid.class_id);
    const int vocab = params.config.vocab;
    double total = 0.0;
    for (int t = 0; t < n; ++t) {
        const float* z = logits->data() + size_t(t) * vocab;
        double mx = z[0];
        for (int j = 1; j < vocab; ++j) mx = std::max(mx, double(z[j]));
        double denom = 0.0;
        for (int j = 0; j < vocab; ++j) denom += std::exp(double(z[j]) - mx);
        total += (mx + std::log(denom)) - double(z[ordered[size_t(t)]]);
    }
    return total / n;
}

size_t JointTable::index_of(std::span<const int> tokens) const {
    size_t idx = 0;
    for (int t : tokens) idx = idx * size_t(vocab) + size_t(t);
    return idx;
}

std::vector<int> JointTable::tokens_of(size_t index) const {
    std::vector<int> out(size_t(n));
    for (int i = n - 1; i >= 0; --i) {
        out[size_t(i)] = int(index % size_t(vocab));
        index /= size_t(vocab);
    }
    return out;
}

namespace {

size_t checked_state_count(int vocab, int n, size_t max_states) {
    size_t states = 1;
    for (int i = 0; i < n; ++i) {
        if (states > max_states / size_t(vocab)) {
            throw std::invalid_argument("joint enumeration: state space too large");
        }
        states *= size_t(vocab);
    }
    return states;
}

}  // namespace

JointTable model_joint_enumeration(const FMTParams& params, const SetPlan& plan, int class_id,
                                   size_t max_states) {
    NoGrad ng;
    const int n = plan.grid.size();
    const int vocab = params.config.vocab;
    const size_t states = checked_state_count(vocab, n, max_states);

    JointTable table;
    table.vocab = vocab;
    table.n = n;
    table.prob.resize(states);
    const auto masks = gen_masks(plan);
    const int n_last = plan.intervals.sizes.back();
    TokenGrid grid;
    grid.shape = plan.grid;
    grid.class_id = class_id;
    for (size_t s = 0; s < states; ++s) {
        grid.tokens = table.tokens_of(s);
        const std::vector<int> ordered = rearrange(grid.tokens, plan.order);
        const std::vector<int> seen(ordered.begin(), ordered.end() - n_last);
        const TensorPtr logits = fmt_forward_train(params, plan, masks, seen, class_id);
        double lp = 0.0;
        for (int t = 0; t < n; ++t) {
            const float* z = logits->data() + size_t(t) * vocab;
            double mx = z[0];
            for (int j = 1; j < vocab; ++j) mx = std::max(mx, double(z[j]));
            double denom = 0.0;
            for (int j = 0; j < vocab; ++j) denom += std::exp(double(z[j]) - mx);
            lp += double(z[ordered[size_t(t)]]) - mx - std::log(denom);
        }
        table.prob[s] = std::exp(lp);
    }
    return table;
}

JointTable source_joint_enumeration(const PatternMixtureSource& source, int class_id,
                                    size_t max_states) {
    const int n = source.shape.size();
    const size_t states = checked_state_count(source.vocab, n, max_states);
    JointTable table;
    table.vocab = source.vocab;
    table.n = n;
    table.prob.resize(states);
    TokenGrid grid;
    grid.shape = source.shape;
    grid.class_id = class_id;
    for (size_t s = 0; s < states; ++s) {
        grid.tokens = table.tokens_of(s);
        const double lp = true_joint_logprob(source, grid, class_id);
        table.prob[s] = std::isfinite(lp) ? std::exp(lp) : 0.0;
    }
    return table;
}

std::vector<double> enumerated_posterior(const JointTable& joint,
                                         const std::map<int, int>& known_cells,
                                         const std::vector<int>& unknown_cells) {
    size_t states = 1;
    for (size_t i = 0; i < unknown_cells.size(); ++i) states *= size_t(joint.vocab);
    std::vector<double> post(states, 0.0);
    double total = 0.0;
    for (size_t s = 0; s < joint.prob.size(); ++s) {
        const std::vector<int> tokens = joint.tokens_of(s);
        bool match = true;
        for (const auto& [pos, val] : known_cells) {
            if (tokens[size_t(pos)] != val) {
                match = false;
                break;
            }
        }
        if (!match) continue;
        size_t key = 0;
        for (int pos : unknown_cells) key = key * size_t(joint.vocab) + size_t(tokens[size_t(pos)]);
        post[key] += joint.prob[s];
        total += joint.prob[s];
    }
    if (total <= 0.0) throw std::invalid_argument("enumerated_posterior: conditioning event has mass 0");
    for (auto& p : post) p /= total;
    return post;
}

}  // namespace sar

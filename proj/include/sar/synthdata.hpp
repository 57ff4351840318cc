// Synthetic token-grid sources with closed-form joints, plus brute-force
// oracles for NLL, joint enumeration and posterior checks. These stand in
// for image codes so every distributional claim has an exact reference.
#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "sar/fmt.hpp"
#include "sar/rng.hpp"
#include "sar/schedule.hpp"
#include "sar/types.hpp"

namespace sar {

/// Mixture of template grids with iid per-token corruption: pick a template
/// by class-conditional weight, then resample each token uniformly over the
/// vocabulary with probability flip_prob.
struct PatternMixtureSource {
    GridShape shape;
    int vocab = 0;
    std::vector<std::vector<int>> templates;    // M grids of N tokens
    std::vector<std::vector<double>> weights;   // per class: M weights summing to 1
    double flip_prob = 0.0;

    int num_classes() const { return int(weights.size()); }
    int num_templates() const { return int(templates.size()); }
    void validate() const;

    std::string to_json() const;
    static PatternMixtureSource from_json(const std::string& text);
};

/// The default desk instance: 4x4 grid, vocab 8, 4 templates that differ at
/// every cell, flip_prob 0.1. Class-conditional weights put mass `anchor` on
/// the class's own template and spread the rest, so context genuinely
/// narrows the posterior.
PatternMixtureSource default_desk_source(double anchor = 0.55);
/// 2x2 grid, vocab 3, enumeration-sized instance (one uniform class).
PatternMixtureSource enumeration_source();
/// Tokens iid uniform over the vocabulary (flip_prob 1).
PatternMixtureSource uniform_source(GridShape shape, int vocab, int num_classes);

TokenGrid sample_grid(const PatternMixtureSource& source, int class_id, Rng& rng);

/// Exact log p(grid | class) under the mixture-with-corruption model.
/// Returns -inf when the grid is impossible (flip_prob 0, off-template).
double true_joint_logprob(const PatternMixtureSource& source, const TokenGrid& grid, int class_id);

/// Per-token probability of `token` at cell `pos` given a template value.
double cell_prob(const PatternMixtureSource& source, int token, int template_token);

// ---- model-side oracles ----

/// Teacher-forced per-token NLL of a grid under the plan's factorization
/// (mean over all N rows, natural log).
double model_nll_per_token(const FMTParams& params, const TokenGrid& grid, const SetPlan& plan);

/// Full model joint over vocab^N grids under the plan (teacher-forced chain
/// of per-token conditionals). Throws when vocab^N exceeds max_states.
struct JointTable {
    int vocab = 0;
    int n = 0;
    std::vector<double> prob;  // indexed by the base-vocab encoding of the grid

    size_t index_of(std::span<const int> tokens) const;
    std::vector<int> tokens_of(size_t index) const;
};

JointTable model_joint_enumeration(const FMTParams& params, const SetPlan& plan, int class_id,
                                   size_t max_states = 1000000);

/// Conditional distribution over the unknown cells given known cell values,
/// computed from an enumerated joint. Keys are base-vocab encodings of the
/// unknown cells in ascending position order.
std::vector<double> enumerated_posterior(const JointTable& joint,
                                         const std::map<int, int>& known_cells,
                                         const std::vector<int>& unknown_cells);

/// Source-joint analog of model_joint_enumeration (exact, for small N).
JointTable source_joint_enumeration(const PatternMixtureSource& source, int class_id,
                                    size_t max_states = 1000000);

}  // namespace sar

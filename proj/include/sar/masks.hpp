// Generalized causal masks: block lower-triangular attention-permission
// matrices derived from output intervals, for the three attention sites
// (encoder self, decoder self, decoder cross).
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sar/schedule.hpp"

namespace sar {

struct BoolMatrix {
    int rows = 0;
    int cols = 0;
    std::vector<uint8_t> data;  // 1 = attention permitted

    BoolMatrix() = default;
    BoolMatrix(int r, int c, uint8_t fill = 0) : rows(r), cols(c), data(size_t(r) * size_t(c), fill) {}

    uint8_t at(int r, int c) const { return data[size_t(r) * size_t(cols) + size_t(c)]; }
    void set(int r, int c, uint8_t v) { data[size_t(r) * size_t(cols) + size_t(c)] = v; }

    BoolMatrix top_left(int r, int c) const;
    bool operator==(const BoolMatrix&) const = default;

    std::string to_ascii() const;  // '#' permitted, '.' forbidden
    std::string to_csv() const;    // rows of 0/1
};

struct MaskOptions {
    /// When the first set is unsupervised (MAR mode), the condition and the
    /// first set are merged into one encoder block: both are given context,
    /// never predicted, so nothing upstream of them is causal.
    bool supervise_first_set = true;
    /// Replace the decoder self-attention mask with all-true (MAR ablation).
    /// Decoder rows carry positions only, so no token values can leak.
    bool drop_decoder_self_mask = false;
};

struct GeneralizedCausalMasks {
    BoolMatrix m_e;   // (1 + N - n_K) square, encoder self-attention
    BoolMatrix m_ds;  // N x N, decoder self-attention
    BoolMatrix m_dc;  // N x (1 + N - n_K), decoder cross-attention

    /// Set id per encoder column: 0 for the condition token, 1..K-1 else.
    std::vector<int> set_of_encoder_pos;
    /// Set id per decoder row, in 1..K.
    std::vector<int> set_of_decoder_pos;

    int encoder_len() const { return m_e.rows; }
    int decoder_len() const { return m_ds.rows; }
};

GeneralizedCausalMasks gen_masks(const OutputIntervals& intervals, MaskOptions opts = {});
/// gen_masks with the plan's supervision flag applied.
GeneralizedCausalMasks gen_masks(const SetPlan& plan, bool drop_decoder_self_mask = false);

struct MaskViolation {
    std::string mask;  // "m_e" | "m_ds" | "m_dc"
    int row = 0;
    int col = 0;  // -1 for row-level violations
    std::string message;
};

/// Re-derives the expected masks from the intervals and reports every
/// mismatch plus structural defects (empty rows, non-nested permissions).
std::vector<MaskViolation> validate_masks(const GeneralizedCausalMasks& masks,
                                          const OutputIntervals& intervals,
                                          MaskOptions opts = {});

}  // namespace sar

#include "sar/masks.hpp"

#include <stdexcept>

namespace sar {

BoolMatrix BoolMatrix::top_left(int r, int c) const {
    if (r > rows || c > cols) throw std::out_of_range("BoolMatrix::top_left");
    BoolMatrix out(r, c);
    for (int i = 0; i < r; ++i) {
        for (int j = 0; j < c; ++j) out.set(i, j, at(i, j));
    }
    return out;
}

std::string BoolMatrix::to_ascii() const {
    std::string s;
    s.reserve(size_t(rows) * size_t(cols + 1));
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) s.push_back(at(r, c) ? '#' : '.');
        s.push_back('\n');
    }
    return s;
}

std::string BoolMatrix::to_csv() const {
    std::string s;
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            if (c) s.push_back(',');
            s.push_back(at(r, c) ? '1' : '0');
        }
        s.push_back('\n');
    }
    return s;
}

namespace {

// Encoder column layout: [condition | set 1 | ... | set K-1].
// set id per encoder column (0 = condition).
std::vector<int> encoder_sets(const OutputIntervals& intervals) {
    std::vector<int> out{0};
    const int k = intervals.count();
    for (int i = 0; i < k - 1; ++i) {
        for (int j = 0; j < intervals.sizes[size_t(i)]; ++j) out.push_back(i + 1);
    }
    return out;
}

// set id per decoder row (1..K).
std::vector<int> decoder_sets(const OutputIntervals& intervals) {
    std::vector<int> out;
    for (int i = 0; i < intervals.count(); ++i) {
        for (int j = 0; j < intervals.sizes[size_t(i)]; ++j) out.push_back(i + 1);
    }
    return out;
}

// m_e block id of an encoder position. With an unsupervised first set the
// condition and set 1 collapse into block 0.
int encoder_block(int set_id, const MaskOptions& opts) {
    if (!opts.supervise_first_set && set_id <= 1) return 0;
    return set_id;
}

}  // namespace

GeneralizedCausalMasks gen_masks(const OutputIntervals& intervals, MaskOptions opts) {
    if (intervals.sizes.empty()) throw std::invalid_argument("gen_masks: empty intervals");
    GeneralizedCausalMasks m;
    m.set_of_encoder_pos = encoder_sets(intervals);
    m.set_of_decoder_pos = decoder_sets(intervals);
    const int le = int(m.set_of_encoder_pos.size());
    const int n = int(m.set_of_decoder_pos.size());

    m.m_e = BoolMatrix(le, le);
    for (int r = 0; r < le; ++r) {
        const int br = encoder_block(m.set_of_encoder_pos[size_t(r)], opts);
        for (int c = 0; c < le; ++c) {
            const int bc = encoder_block(m.set_of_encoder_pos[size_t(c)], opts);
            m.m_e.set(r, c, bc <= br);
        }
    }

    m.m_ds = BoolMatrix(n, n);
    for (int r = 0; r < n; ++r) {
        for (int c = 0; c < n; ++c) {
            const bool ok = opts.drop_decoder_self_mask ||
                            m.set_of_decoder_pos[size_t(c)] <= m.set_of_decoder_pos[size_t(r)];
            m.m_ds.set(r, c, ok);
        }
    }

    // Query set k sees the condition plus encoder sets 1..k-1.
    m.m_dc = BoolMatrix(n, le);
    for (int r = 0; r < n; ++r) {
        const int k = m.set_of_decoder_pos[size_t(r)];
        for (int c = 0; c < le; ++c) {
            m.m_dc.set(r, c, m.set_of_encoder_pos[size_t(c)] < k);
        }
    }
    return m;
}

GeneralizedCausalMasks gen_masks(const SetPlan& plan, bool drop_decoder_self_mask) {
    MaskOptions opts;
    opts.supervise_first_set = plan.supervise_first_set;
    opts.drop_decoder_self_mask = drop_decoder_self_mask;
    return gen_masks(plan.intervals, opts);
}

std::vector<MaskViolation> validate_masks(const GeneralizedCausalMasks& masks,
                                          const OutputIntervals& intervals, MaskOptions opts) {
    std::vector<MaskViolation> out;
    const GeneralizedCausalMasks expect = gen_masks(intervals, opts);

    auto diff = [&out](const char* name, const BoolMatrix& got, const BoolMatrix& want) {
        if (got.rows != want.rows || got.cols != want.cols) {
            out.push_back({name, -1, -1, "shape mismatch"});
            return;
        }
        for (int r = 0; r < got.rows; ++r) {
            for (int c = 0; c < got.cols; ++c) {
                if (got.at(r, c) != want.at(r, c)) {
                    out.push_back({name, r, c,
                                   got.at(r, c) ? "unexpected permission" : "missing permission"});
                }
            }
        }
    };
    diff("m_e", masks.m_e, expect.m_e);
    diff("m_ds", masks.m_ds, expect.m_ds);
    diff("m_dc", masks.m_dc, expect.m_dc);

    auto check_rows = [&out](const char* name, const BoolMatrix& m) {
        for (int r = 0; r < m.rows; ++r) {
            bool any = false;
            for (int c = 0; c < m.cols && !any; ++c) any = m.at(r, c);
            if (!any) out.push_back({name, r, -1, "row has no permitted column"});
        }
    };
    check_rows("m_e", masks.m_e);
    check_rows("m_ds", masks.m_ds);
    check_rows("m_dc", masks.m_dc);

    // Nested permissions: a later set's row must permit a superset of any
    // earlier set's row.
    auto check_nested = [&out, &masks](const char* name, const BoolMatrix& m) {
        for (int r1 = 0; r1 + 1 < m.rows; ++r1) {
            const int r2 = r1 + 1;
            if (masks.set_of_decoder_pos[size_t(r1)] > masks.set_of_decoder_pos[size_t(r2)]) continue;
            for (int c = 0; c < m.cols; ++c) {
                if (m.at(r1, c) && !m.at(r2, c)) {
                    out.push_back({name, r2, c, "permission not monotone across rows"});
                }
            }
        }
    };
    if (!opts.drop_decoder_self_mask) check_nested("m_ds", masks.m_ds);
    check_nested("m_dc", masks.m_dc);
    return out;
}

}  // namespace sar

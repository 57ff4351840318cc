#include "sar/fmt.hpp"

#include <cmath>
#include <stdexcept>

namespace sar {

int FMTConfig::ffn_hidden() const {
    const double x = 8.0 * width / 3.0;
    return int(std::lround(x / 8.0)) * 8;
}

void FMTConfig::validate() const {
    grid.validate();
    if (enc_layers < 1 || dec_layers < 1) throw std::invalid_argument("config: layers must be >= 1");
    if (width < 4 || heads < 1 || width % heads != 0) {
        throw std::invalid_argument("config: width must be a positive multiple of heads");
    }
    if (head_dim() % 4 != 0) throw std::invalid_argument("config: head_dim must be a multiple of 4");
    if (vocab < 2) throw std::invalid_argument("config: vocab must be >= 2");
    if (num_classes < 1) throw std::invalid_argument("config: num_classes must be >= 1");
}

nlohmann::json FMTConfig::to_json() const {
    return {{"enc_layers", enc_layers},
            {"dec_layers", dec_layers},
            {"width", width},
            {"heads", heads},
            {"vocab", vocab},
            {"num_classes", num_classes},
            {"grid_height", grid.height},
            {"grid_width", grid.width},
            {"pos_embed", pos_embed == PosEmbedKind::sine ? "sine" : "learned"}};
}

FMTConfig FMTConfig::from_json(const nlohmann::json& j) {
    FMTConfig c;
    c.enc_layers = j.at("enc_layers").get<int>();
    c.dec_layers = j.at("dec_layers").get<int>();
    c.width = j.at("width").get<int>();
    c.heads = j.at("heads").get<int>();
    c.vocab = j.at("vocab").get<int>();
    c.num_classes = j.at("num_classes").get<int>();
    c.grid = GridShape{j.at("grid_height").get<int>(), j.at("grid_width").get<int>()};
    const std::string pe = j.at("pos_embed").get<std::string>();
    if (pe == "sine") {
        c.pos_embed = PosEmbedKind::sine;
    } else if (pe == "learned") {
        c.pos_embed = PosEmbedKind::learned;
    } else {
        throw std::invalid_argument("config: unknown pos_embed " + pe);
    }
    c.validate();
    return c;
}

std::vector<TensorPtr> FMTParams::parameters() const {
    std::vector<TensorPtr> out;
    out.reserve(named.size());
    for (const auto& [name, t] : named) out.push_back(t);
    return out;
}

namespace {

TensorPtr init_weight(int rows, int cols, Rng& rng, std::vector<std::pair<std::string, TensorPtr>>& reg,
                      const std::string& name, float sigma = 0.02f) {
    std::vector<float> data(size_t(rows) * size_t(cols));
    for (auto& x : data) x = float(rng.truncated_normal(sigma));
    auto t = tensor({rows, cols}, std::move(data), /*requires_grad=*/true);
    reg.emplace_back(name, t);
    return t;
}

TensorPtr init_ones(int cols, std::vector<std::pair<std::string, TensorPtr>>& reg,
                    const std::string& name) {
    auto t = tensor({1, cols}, std::vector<float>(size_t(cols), 1.f), true);
    reg.emplace_back(name, t);
    return t;
}

TensorPtr init_zeros(int cols, std::vector<std::pair<std::string, TensorPtr>>& reg,
                     const std::string& name) {
    auto t = tensor({1, cols}, std::vector<float>(size_t(cols), 0.f), true);
    reg.emplace_back(name, t);
    return t;
}

AttnWeights init_attn(int width, Rng& rng, std::vector<std::pair<std::string, TensorPtr>>& reg,
                      const std::string& prefix) {
    AttnWeights w;
    w.wq = init_weight(width, width, rng, reg, prefix + ".wq");
    w.wk = init_weight(width, width, rng, reg, prefix + ".wk");
    w.wv = init_weight(width, width, rng, reg, prefix + ".wv");
    w.wo = init_weight(width, width, rng, reg, prefix + ".wo");
    return w;
}

FFNWeights init_ffn(int width, int hidden, Rng& rng,
                    std::vector<std::pair<std::string, TensorPtr>>& reg, const std::string& prefix) {
    FFNWeights f;
    f.gate = init_weight(width, hidden, rng, reg, prefix + ".gate");
    f.up = init_weight(width, hidden, rng, reg, prefix + ".up");
    f.down = init_weight(hidden, width, rng, reg, prefix + ".down");
    return f;
}

// Constant axial sine table: first half of the dims encodes the row
// coordinate, second half the column.
TensorPtr build_sine_table(const FMTConfig& cfg) {
    const int n = cfg.grid.size();
    const int w = cfg.width;
    const int half = w / 2;
    std::vector<float> data(size_t(n) * size_t(w));
    for (int p = 0; p < n; ++p) {
        const int coord[2] = {p / cfg.grid.width, p % cfg.grid.width};
        for (int axis = 0; axis < 2; ++axis) {
            float* out = data.data() + size_t(p) * w + size_t(axis) * half;
            for (int j = 0; j < half / 2; ++j) {
                const double freq = std::pow(10000.0, -2.0 * j / half);
                out[2 * j] = float(std::sin(coord[axis] * freq));
                out[2 * j + 1] = float(std::cos(coord[axis] * freq));
            }
        }
    }
    return tensor({n, w}, std::move(data), false);
}

}  // namespace

FMTParams init_params(const FMTConfig& config, Rng& rng) {
    config.validate();
    FMTParams p;
    p.config = config;
    auto& reg = p.named;
    p.token_embed = init_weight(config.vocab, config.width, rng, reg, "token_embed");
    p.class_embed = init_weight(config.num_classes + 1, config.width, rng, reg, "class_embed");
    if (config.pos_embed == PosEmbedKind::learned) {
        p.pos_table = init_weight(config.grid.size(), config.width, rng, reg, "pos_table");
    }
    const int hidden = config.ffn_hidden();
    for (int l = 0; l < config.enc_layers; ++l) {
        const std::string pre = "enc." + std::to_string(l);
        EncoderLayer layer;
        layer.attn_norm_g = init_ones(config.width, reg, pre + ".attn_norm.g");
        layer.attn = init_attn(config.width, rng, reg, pre + ".attn");
        layer.ffn_norm_g = init_ones(config.width, reg, pre + ".ffn_norm.g");
        layer.ffn = init_ffn(config.width, hidden, rng, reg, pre + ".ffn");
        p.encoder.push_back(std::move(layer));
    }
    for (int l = 0; l < config.dec_layers; ++l) {
        const std::string pre = "dec." + std::to_string(l);
        DecoderLayer layer;
        layer.self_norm_g = init_ones(config.width, reg, pre + ".self_norm.g");
        layer.self_attn = init_attn(config.width, rng, reg, pre + ".self");
        layer.cross_norm_g = init_ones(config.width, reg, pre + ".cross_norm.g");
        layer.cross_attn = init_attn(config.width, rng, reg, pre + ".cross");
        layer.ffn_norm_g = init_ones(config.width, reg, pre + ".ffn_norm.g");
        layer.ffn = init_ffn(config.width, hidden, rng, reg, pre + ".ffn");
        p.decoder.push_back(std::move(layer));
    }
    p.enc_norm_g = init_ones(config.width, reg, "enc_norm.g");
    p.dec_norm_g = init_ones(config.width, reg, "dec_norm.g");
    p.head_w = init_weight(config.width, config.vocab, rng, reg, "head.w");
    p.head_b = init_zeros(config.vocab, reg, "head.b");
    p.pos_sine = build_sine_table(config);
    return p;
}

FMTParams grad_view(const FMTParams& base) {
    FMTParams v;
    v.config = base.config;
    v.pos_sine = base.pos_sine;

    // Map every registry tensor to its view, then rebuild the structure
    // through the same registry order used by init_params.
    std::vector<TensorPtr> views;
    views.reserve(base.named.size());
    for (const auto& [name, t] : base.named) {
        auto pv = param_view(t);
        v.named.emplace_back(name, pv);
        views.push_back(pv);
    }
    size_t i = 0;
    auto next = [&]() { return views.at(i++); };
    v.token_embed = next();
    v.class_embed = next();
    if (base.config.pos_embed == PosEmbedKind::learned) v.pos_table = next();
    for (int l = 0; l < base.config.enc_layers; ++l) {
        EncoderLayer layer;
        layer.attn_norm_g = next();
        layer.attn = {next(), next(), next(), next()};
        layer.ffn_norm_g = next();
        layer.ffn = {next(), next(), next()};
        v.encoder.push_back(std::move(layer));
    }
    for (int l = 0; l < base.config.dec_layers; ++l) {
        DecoderLayer layer;
        layer.self_norm_g = next();
        layer.self_attn = {next(), next(), next(), next()};
        layer.cross_norm_g = next();
        layer.cross_attn = {next(), next(), next(), next()};
        layer.ffn_norm_g = next();
        layer.ffn = {next(), next(), next()};
        v.decoder.push_back(std::move(layer));
    }
    v.enc_norm_g = next();
    v.dec_norm_g = next();
    v.head_w = next();
    v.head_b = next();
    if (i != views.size()) throw std::logic_error("grad_view: registry order mismatch");
    return v;
}

void zero_view_grads(FMTParams& view) {
    for (auto& [name, t] : view.named) t->zero_grad();
}

void accumulate_grads(FMTParams& base, const FMTParams& view) {
    if (base.named.size() != view.named.size()) throw std::invalid_argument("accumulate_grads: mismatch");
    for (size_t i = 0; i < base.named.size(); ++i) {
        auto& dst = base.named[i].second;
        const auto& src = view.named[i].second;
        dst->ensure_grad();
        for (size_t j = 0; j < dst->grad.size(); ++j) dst->grad[j] += src->grad[j];
    }
}

RopeTable make_rope_table(const FMTConfig& config) {
    const int dh = config.head_dim();
    const int per_head = dh / 2;       // angle slots per head
    const int axis_pairs = per_head / 2;
    RopeTable t;
    t.width = config.width;
    t.pairs = config.width / 2;
    const int n = config.grid.size();
    t.rows.resize(size_t(n) * size_t(t.pairs));
    for (int p = 0; p < n; ++p) {
        const int coord[2] = {p / config.grid.width, p % config.grid.width};
        float head_pattern[256];
        for (int axis = 0; axis < 2; ++axis) {
            for (int j = 0; j < axis_pairs; ++j) {
                const double freq = std::pow(10000.0, -double(2 * j) / per_head);
                head_pattern[axis * axis_pairs + j] = float(coord[axis] * freq);
            }
        }
        float* row = t.rows.data() + size_t(p) * size_t(t.pairs);
        for (int h = 0; h < config.heads; ++h) {
            for (int j = 0; j < per_head; ++j) row[h * per_head + j] = head_pattern[j];
        }
    }
    return t;
}

std::vector<float> rope_angles_for(const RopeTable& table, std::span<const int> grid_positions) {
    std::vector<float> out(grid_positions.size() * size_t(table.pairs), 0.f);
    for (size_t i = 0; i < grid_positions.size(); ++i) {
        const int p = grid_positions[i];
        if (p < 0) continue;  // null position keeps zero angles
        std::copy_n(table.rows.data() + size_t(p) * size_t(table.pairs), size_t(table.pairs),
                    out.data() + i * size_t(table.pairs));
    }
    return out;
}

std::vector<float> rope_table_for_order(const RopeTable& table, const SequenceOrder& order) {
    return rope_angles_for(table, order.perm);
}

TensorPtr pos_embed_rows(const FMTParams& params, std::span<const int> grid_positions) {
    const TensorPtr& table =
        params.config.pos_embed == PosEmbedKind::learned ? params.pos_table : params.pos_sine;
    return embedding_rows(table, grid_positions);
}

namespace {

void count_proj(AttnCounter* ctr, int rows, int in, int out) {
    if (ctr) ctr->macs += uint64_t(rows) * uint64_t(in) * uint64_t(out);
}

TensorPtr project(const TensorPtr& x, const TensorPtr& w, AttnCounter* ctr) {
    count_proj(ctr, x->rows(), x->cols(), w->cols());
    return matmul(x, w);
}

// Scores, masked softmax, value mix and output projection over all heads.
// q, k roped already; mask == nullptr means every pair is permitted.
TensorPtr attn_mix(const AttnWeights& w, int heads, const TensorPtr& q, const TensorPtr& k,
                   const TensorPtr& v, const BoolMatrix* mask, AttnCounter* ctr) {
    const int width = q->cols();
    const int dh = width / heads;
    const float inv_sqrt = 1.f / std::sqrt(float(dh));
    std::vector<TensorPtr> ctx;
    ctx.reserve(size_t(heads));
    for (int h = 0; h < heads; ++h) {
        auto qh = slice_cols(q, h * dh, dh);
        auto kh = slice_cols(k, h * dh, dh);
        auto vh = slice_cols(v, h * dh, dh);
        auto scores = scale(matmul_nt(qh, kh), inv_sqrt);
        auto weights = masked_softmax(scores, mask);
        ctx.push_back(matmul(weights, vh));
    }
    if (ctr) ctr->macs += 2ull * uint64_t(q->rows()) * uint64_t(k->rows()) * uint64_t(width);
    return project(concat_cols(ctx), w.wo, ctr);
}

TensorPtr ffn_block(const FFNWeights& f, const TensorPtr& x) {
    return matmul(mul(silu(matmul(x, f.gate)), matmul(x, f.up)), f.down);
}

TensorPtr append_rows(const TensorPtr& base, const TensorPtr& rows) {
    if (!base || base->rows() == 0) return rows;
    return concat_rows({base, rows});
}

}  // namespace

TensorPtr fmt_forward_core(const FMTParams& params, const SetPlan& plan,
                           const GeneralizedCausalMasks& masks,
                           std::span<const int> seen_ordered_tokens, int class_id, int dec_rows,
                           AttnCounter* counter, ForwardTrace* trace) {
    const FMTConfig& cfg = params.config;
    const int n = plan.grid.size();
    const int n_seen = int(seen_ordered_tokens.size());
    const int le = 1 + n_seen;
    if (n_seen > n) throw std::invalid_argument("forward: too many seen tokens");
    if (le > masks.encoder_len()) throw std::invalid_argument("forward: seen tokens exceed mask");
    if (dec_rows < 0 || dec_rows > n) throw std::invalid_argument("forward: bad decoder row count");
    if (class_id < 0 || class_id > cfg.num_classes) throw std::invalid_argument("forward: bad class id");

    const RopeTable rope_table = make_rope_table(cfg);

    // Encoder stream: condition token then the seen tokens in causal order.
    std::vector<int> enc_pos(size_t(le));
    enc_pos[0] = -1;
    for (int i = 0; i < n_seen; ++i) enc_pos[size_t(i + 1)] = plan.order.perm[size_t(i)];
    const std::vector<float> enc_angles = rope_angles_for(rope_table, enc_pos);

    const std::vector<int> cls_id{class_id};
    auto cls_row = embedding_rows(params.class_embed, cls_id);
    auto tok_rows = embedding_rows(params.token_embed, seen_ordered_tokens);
    auto h = n_seen > 0 ? concat_rows({cls_row, tok_rows}) : cls_row;
    if (trace) {
        trace->enc_token_rows = tok_rows;
        trace->enc_input = h;
    }

    const BoolMatrix m_e = masks.m_e.top_left(le, le);
    for (const auto& layer : params.encoder) {
        auto xn = rmsnorm(h, layer.attn_norm_g);
        auto q = rope(project(xn, layer.attn.wq, counter), enc_angles);
        auto k = rope(project(xn, layer.attn.wk, counter), enc_angles);
        auto v = project(xn, layer.attn.wv, counter);
        h = add(h, attn_mix(layer.attn, cfg.heads, q, k, v, &m_e, counter));
        h = add(h, ffn_block(layer.ffn, rmsnorm(h, layer.ffn_norm_g)));
    }
    auto enc_out = rmsnorm(h, params.enc_norm_g);
    if (trace) trace->enc_out = enc_out;

    if (dec_rows == 0) return tensor({0, cfg.vocab});

    // Decoder rows are position queries for the first dec_rows causal steps.
    std::vector<int> dec_pos(plan.order.perm.begin(), plan.order.perm.begin() + dec_rows);
    const std::vector<float> dec_angles = rope_angles_for(rope_table, dec_pos);

    const BoolMatrix m_ds = masks.m_ds.top_left(dec_rows, dec_rows);
    const BoolMatrix m_dc = masks.m_dc.top_left(dec_rows, le);

    auto hd = pos_embed_rows(params, dec_pos);
    for (const auto& layer : params.decoder) {
        auto xn = rmsnorm(hd, layer.self_norm_g);
        auto q = rope(project(xn, layer.self_attn.wq, counter), dec_angles);
        auto k = rope(project(xn, layer.self_attn.wk, counter), dec_angles);
        auto v = project(xn, layer.self_attn.wv, counter);
        hd = add(hd, attn_mix(layer.self_attn, cfg.heads, q, k, v, &m_ds, counter));

        auto cn = rmsnorm(hd, layer.cross_norm_g);
        auto cq = rope(project(cn, layer.cross_attn.wq, counter), dec_angles);
        auto ck = rope(project(enc_out, layer.cross_attn.wk, counter), enc_angles);
        auto cv = project(enc_out, layer.cross_attn.wv, counter);
        hd = add(hd, attn_mix(layer.cross_attn, cfg.heads, cq, ck, cv, &m_dc, counter));

        hd = add(hd, ffn_block(layer.ffn, rmsnorm(hd, layer.ffn_norm_g)));
    }
    auto final = rmsnorm(hd, params.dec_norm_g);
    return add_rowvec(matmul(final, params.head_w), params.head_b);
}

TensorPtr fmt_forward_train(const FMTParams& params, const SetPlan& plan,
                            const GeneralizedCausalMasks& masks,
                            std::span<const int> seen_ordered_tokens, int class_id,
                            AttnCounter* counter, ForwardTrace* trace) {
    const int n = plan.grid.size();
    const int n_last = plan.intervals.sizes.back();
    if (int(seen_ordered_tokens.size()) != n - n_last) {
        throw std::invalid_argument("forward_train: seen tokens must be the sequence minus the last set");
    }
    return fmt_forward_core(params, plan, masks, seen_ordered_tokens, class_id, n, counter, trace);
}

KVCache make_kv_cache(const SetPlan& plan, int class_id) {
    plan.validate();
    KVCache c;
    c.plan = plan;
    c.class_id = class_id;
    return c;
}

TensorPtr fmt_forward_step(const FMTParams& params, KVCache& cache,
                           std::span<const int> new_seen_tokens, int set_index,
                           AttnCounter* counter) {
    const FMTConfig& cfg = params.config;
    const SetPlan& plan = cache.plan;
    if (set_index != cache.committed_sets) {
        throw std::invalid_argument("forward_step: set index out of sync with cache");
    }
    if (set_index >= plan.num_sets()) throw std::out_of_range("forward_step: set index past plan");
    if (cache.enc_self.empty()) {
        cache.enc_self.resize(size_t(cfg.enc_layers));
        cache.dec_cross.resize(size_t(cfg.dec_layers));
        cache.dec_self.resize(size_t(cfg.dec_layers));
    }

    const RopeTable rope_table = make_rope_table(cfg);

    // Tokens entering the encoder this step: the condition at step 0, the
    // previously emitted set afterwards.
    std::vector<int> enc_pos;
    TensorPtr new_rows;
    if (set_index == 0) {
        if (!new_seen_tokens.empty()) {
            throw std::invalid_argument("forward_step: step 0 feeds the condition token only");
        }
        enc_pos = {-1};
        const std::vector<int> cls_id{cache.class_id};
        new_rows = embedding_rows(params.class_embed, cls_id);
    } else {
        const int expect = plan.intervals.sizes[size_t(set_index - 1)];
        if (int(new_seen_tokens.size()) != expect) {
            throw std::invalid_argument("forward_step: token count != previous set size");
        }
        const int off = plan.intervals.offset(set_index - 1);
        for (int i = 0; i < expect; ++i) enc_pos.push_back(plan.order.perm[size_t(off + i)]);
        if (expect > 0) new_rows = embedding_rows(params.token_embed, new_seen_tokens);
    }

    if (new_rows) {
        const std::vector<float> angles = rope_angles_for(rope_table, enc_pos);
        auto h = new_rows;
        for (size_t l = 0; l < params.encoder.size(); ++l) {
            const auto& layer = params.encoder[l];
            auto xn = rmsnorm(h, layer.attn_norm_g);
            auto q = rope(project(xn, layer.attn.wq, counter), angles);
            auto k_new = rope(project(xn, layer.attn.wk, counter), angles);
            auto v_new = project(xn, layer.attn.wv, counter);
            cache.enc_self[l].k = append_rows(cache.enc_self[l].k, k_new);
            cache.enc_self[l].v = append_rows(cache.enc_self[l].v, v_new);
            // New rows sit in the newest block: every cached column is permitted.
            h = add(h, attn_mix(layer.attn, cfg.heads, q, cache.enc_self[l].k, cache.enc_self[l].v,
                                nullptr, counter));
            h = add(h, ffn_block(layer.ffn, rmsnorm(h, layer.ffn_norm_g)));
        }
        auto out_new = rmsnorm(h, params.enc_norm_g);
        cache.enc_out = append_rows(cache.enc_out, out_new);
        for (size_t l = 0; l < params.decoder.size(); ++l) {
            const auto& layer = params.decoder[l];
            auto ck = rope(project(out_new, layer.cross_attn.wk, counter), angles);
            auto cv = project(out_new, layer.cross_attn.wv, counter);
            cache.dec_cross[l].k = append_rows(cache.dec_cross[l].k, ck);
            cache.dec_cross[l].v = append_rows(cache.dec_cross[l].v, cv);
        }
        cache.enc_len += int(enc_pos.size());
    }

    cache.committed_sets += 1;

    const int n_k = plan.intervals.sizes[size_t(set_index)];
    if (n_k == 0) return tensor({0, cfg.vocab});

    const int off = plan.intervals.offset(set_index);
    std::vector<int> dec_pos;
    for (int i = 0; i < n_k; ++i) dec_pos.push_back(plan.order.perm[size_t(off + i)]);
    const std::vector<float> dec_angles = rope_angles_for(rope_table, dec_pos);

    auto hd = pos_embed_rows(params, dec_pos);
    for (size_t l = 0; l < params.decoder.size(); ++l) {
        const auto& layer = params.decoder[l];
        auto xn = rmsnorm(hd, layer.self_norm_g);
        auto q = rope(project(xn, layer.self_attn.wq, counter), dec_angles);
        auto k_new = rope(project(xn, layer.self_attn.wk, counter), dec_angles);
        auto v_new = project(xn, layer.self_attn.wv, counter);
        cache.dec_self[l].k = append_rows(cache.dec_self[l].k, k_new);
        cache.dec_self[l].v = append_rows(cache.dec_self[l].v, v_new);
        hd = add(hd, attn_mix(layer.self_attn, cfg.heads, q, cache.dec_self[l].k,
                              cache.dec_self[l].v, nullptr, counter));

        auto cn = rmsnorm(hd, layer.cross_norm_g);
        auto cq = rope(project(cn, layer.cross_attn.wq, counter), dec_angles);
        hd = add(hd, attn_mix(layer.cross_attn, cfg.heads, cq, cache.dec_cross[l].k,
                              cache.dec_cross[l].v, nullptr, counter));

        hd = add(hd, ffn_block(layer.ffn, rmsnorm(hd, layer.ffn_norm_g)));
    }
    cache.dec_len += n_k;
    auto final = rmsnorm(hd, params.dec_norm_g);
    return add_rowvec(matmul(final, params.head_w), params.head_b);
}

}  // namespace sar

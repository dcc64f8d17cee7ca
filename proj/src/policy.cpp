#include "objbridge/policy.h"

#include <cassert>
#include <cmath>

#include "objbridge/errors.h"

namespace objbridge {

namespace {

// Name queries start as noise plus a shared bias along the occupancy key
// dimension: initial attention prefers occupied cells over background for
// every name alike (an objectness prior; which object a name means is only
// ever learned from data). The cell projection reserves aligned dimensions
// for attributes, occupancy and position so the key space is
// well-conditioned from the start.
constexpr double kEmbedInitSigma = 0.5;
constexpr double kObjectnessBias = 70.0;
constexpr double kAttrKeyGain = 3.5;
constexpr double kPosKeyGain = 1.5;
constexpr double kImprintScale = 25.0;
constexpr int kPosRampsPerAxis = 10;
constexpr double kPosRampGain = 4.5;

int ramp_dims(const ModelConfig& cfg) {
    const int base = cfg.attr_dim + 3;
    return std::min(cfg.hidden - base, 2 * kPosRampsPerAxis) / 2 * 2;
}



void add_scaled(std::span<double> dst, std::span<const double> src) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

Tensor tensor_view(const std::vector<double>& v, const std::vector<int>& shape) {
    Tensor t;
    t.shape = shape;
    t.v = v;
    return t;
}

}  // namespace

std::vector<Parameter*> PolicyParams::all() {
    std::vector<Parameter*> out;
    out.reserve(kParamCount);
    for (Parameter& p : slots) out.push_back(&p);
    return out;
}

std::int64_t PolicyParams::param_count() const {
    std::int64_t n = 0;
    for (const Parameter& p : slots) n += p.value.size();
    return n;
}

PolicyParams PolicyParams::init(const ModelConfig& cfg, std::uint64_t seed) {
    if (cfg.attr_dim < 1 || cfg.grid < 1 || cfg.hidden < 1 || cfg.vocab_slots < 1 ||
        cfg.n_skills < 1 || cfg.diffusion_steps < 1 || cfg.t_emb_dim < 2) {
        throw UsageError("ModelConfig: all extents must be >= 1");
    }
    if (cfg.reserved_slots < 8) {
        throw UsageError("ModelConfig: at least 8 reserved slots are required");
    }
    if (cfg.reserved_slots >= cfg.vocab_slots) {
        throw UsageError("ModelConfig: reserved slots must leave room for real names");
    }
    if (cfg.hidden < cfg.attr_dim + 3) {
        throw UsageError("ModelConfig: hidden width must cover the structured key dims");
    }
    const int h = cfg.hidden;
    PolicyParams p;
    p.config = cfg;
    p.at(kNameEmb) = Parameter("name_emb", {cfg.vocab_slots, h});
    p.at(kSkillEmb) = Parameter("skill_emb", {cfg.n_skills, h});
    p.at(kCellW) = Parameter("cell_w", {cfg.cell_inputs(), h});
    p.at(kCellB) = Parameter("cell_b", {h});
    p.at(kBBoxW1) = Parameter("bbox_w1", {h, h});
    p.at(kBBoxB1) = Parameter("bbox_b1", {h});
    p.at(kBBoxW2) = Parameter("bbox_w2", {h, 4});
    p.at(kBBoxB2) = Parameter("bbox_b2", {4});
    p.at(kFilmW) = Parameter("film_w", {4, 2 * h});
    p.at(kFilmB) = Parameter("film_b", {2 * h});
    p.at(kTrunkW1) = Parameter("trunk_w1", {cfg.trunk_inputs(), h});
    p.at(kTrunkB1) = Parameter("trunk_b1", {h});
    p.at(kTrunkW2) = Parameter("trunk_w2", {h, 4});
    p.at(kTrunkB2) = Parameter("trunk_b2", {4});
    p.at(kPresenceW) = Parameter("presence_w", {h, 1});
    p.at(kPresenceB) = Parameter("presence_b", {1});
    p.at(kDenW1) = Parameter("den_w1", {cfg.denoiser_inputs(), h});
    p.at(kDenB1) = Parameter("den_b1", {h});
    p.at(kDenW2) = Parameter("den_w2", {h, 4});
    p.at(kDenB2) = Parameter("den_b2", {4});

    Rng rng(mix64(seed, 0x706f6c69637900ULL));
    for (int i = 0; i < kParamCount; ++i) {
        Parameter& param = p.slots[static_cast<std::size_t>(i)];
        if (i == kFilmW || i == kFilmB) continue;  // identity injection at init
        // The trunk input layer also starts at zero: with the hidden layer
        // silent, the film bias term (linear in the predicted box) is the
        // steepest descent direction for the action loss, so the box pathway
        // wins the reliance race against raw context features. Symmetry is
        // broken by the glorot-initialized output layer.
        if (i == kTrunkW1) continue;
        if (i == kNameEmb || i == kSkillEmb) {
            for (double& x : param.value.v) x = rng.normal(0.0, kEmbedInitSigma);
        } else if (param.value.shape.size() == 2) {
            init_glorot(param, rng);
        }  // biases stay zero
    }
    for (int id = 0; id < cfg.vocab_slots; ++id) {
        double* row = p.at(kNameEmb).value.row(id);
        zero_positional_key_dims(cfg, row);
        row[cfg.attr_dim] += kObjectnessBias;
    }
    Tensor& cw = p.at(kCellW).value;
    for (int a = 0; a < cfg.attr_dim; ++a) cw.row(a)[a] += kAttrKeyGain;
    cw.row(cfg.attr_dim)[cfg.attr_dim] += kAttrKeyGain;
    cw.row(cfg.attr_dim + 1)[cfg.attr_dim + 1] += kPosKeyGain;
    cw.row(cfg.attr_dim + 2)[cfg.attr_dim + 2] += kPosKeyGain;
    // Fixed positional ramp basis in the remaining key dims: cell positions
    // become near-linearly decodable, which is what the box head needs.
    {
        Tensor& cb = p.at(kCellB).value;
        const int base = cfg.attr_dim + 3;
        const int ramps = std::min(cfg.hidden - base, 2 * kPosRampsPerAxis) / 2;
        for (int k = 0; k < ramps; ++k) {
            const double offset = (k + 1.0) / (ramps + 1.0);
            cw.row(cfg.attr_dim + 1)[base + 2 * k] += kPosRampGain;
            cb.v[static_cast<std::size_t>(base + 2 * k)] += -kPosRampGain * offset;
            cw.row(cfg.attr_dim + 2)[base + 2 * k + 1] += kPosRampGain;
            cb.v[static_cast<std::size_t>(base + 2 * k + 1)] += -kPosRampGain * offset;
        }
    }
    return p;
}

void zero_positional_key_dims(const ModelConfig& cfg, double* v) {
    v[cfg.attr_dim + 1] = 0.0;
    v[cfg.attr_dim + 2] = 0.0;
    const int base = cfg.attr_dim + 3;
    for (int k = 0; k < ramp_dims(cfg); ++k) v[base + k] = 0.0;
}

void imprint_name_embeddings(PolicyParams& p, const std::vector<ObjectSpec>& vocab) {
    const ModelConfig& cfg = p.config;
    const int h = cfg.hidden;
    const int in = cfg.cell_inputs();
    for (const ObjectSpec& o : vocab) {
        if (o.name_id < 0 || o.name_id >= cfg.vocab_slots - cfg.reserved_slots) {
            throw UsageError("imprint: name_id outside the base vocabulary: " + o.name);
        }
        if (static_cast<int>(o.attributes.size()) != cfg.attr_dim) {
            throw UsageError("imprint: attribute dimension mismatch for " + o.name);
        }
        std::vector<double> x(static_cast<std::size_t>(in), 0.0);
        for (int c = 0; c < cfg.attr_dim; ++c) x[static_cast<std::size_t>(c)] = o.attributes[static_cast<std::size_t>(c)];
        x[static_cast<std::size_t>(cfg.attr_dim)] = 1.0;      // occupancy
        x[static_cast<std::size_t>(cfg.attr_dim + 1)] = 0.5;  // canonical cell center
        x[static_cast<std::size_t>(cfg.attr_dim + 2)] = 0.5;
        std::vector<double> pre(static_cast<std::size_t>(h)), key(static_cast<std::size_t>(h));
        affine_forward(x, 1, in, h, p.at(kCellW).value, p.at(kCellB).value, pre);
        tanh_forward(pre, key);
        zero_positional_key_dims(cfg, key.data());  // align with looks, not places
        double norm = 0.0;
        for (double v : key) norm += v * v;
        norm = std::sqrt(norm);
        if (norm < 1e-12) continue;
        double* row = p.at(kNameEmb).value.row(o.name_id);
        for (int j = 0; j < h; ++j) row[j] = key[static_cast<std::size_t>(j)] / norm * kImprintScale;
    }
}

GradBuffer::GradBuffer(const PolicyParams& p) {
    g.resize(kParamCount);
    for (int i = 0; i < kParamCount; ++i) {
        g[static_cast<std::size_t>(i)].assign(
            p.slots[static_cast<std::size_t>(i)].value.v.size(), 0.0);
    }
}

void GradBuffer::clear() {
    for (auto& v : g) std::fill(v.begin(), v.end(), 0.0);
}

void GradBuffer::add_to(PolicyParams& p) const {
    for (int i = 0; i < kParamCount; ++i) {
        auto& dst = p.slots[static_cast<std::size_t>(i)].grad.v;
        const auto& src = g[static_cast<std::size_t>(i)];
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
    }
}

// ---- encoder ------------------------------------------------------------------

void encode_forward(const PolicyParams& p, const FeatureImage& img, int name_id,
                    EncodeCache& c) {
    const ModelConfig& cfg = p.config;
    if (name_id < 0 || name_id >= cfg.vocab_slots) {
        throw UsageError("encode: name_id outside the vocabulary slots");
    }
    if (img.g != cfg.grid || img.channels != cfg.attr_dim + 1) {
        throw UsageError("encode: image does not match the model config");
    }
    const int n = cfg.grid * cfg.grid;
    const int in = cfg.cell_inputs();
    const int h = cfg.hidden;
    c.name_id = name_id;
    c.cells.resize(static_cast<std::size_t>(n) * in);
    for (int iy = 0; iy < cfg.grid; ++iy) {
        for (int ix = 0; ix < cfg.grid; ++ix) {
            double* row = c.cells.data() + (static_cast<std::size_t>(iy) * cfg.grid + ix) * in;
            const double* cell = img.cell(iy, ix);
            for (int ch = 0; ch < img.channels; ++ch) row[ch] = cell[ch];
            row[img.channels] = (ix + 0.5) / cfg.grid;
            row[img.channels + 1] = (iy + 0.5) / cfg.grid;
        }
    }
    c.pre.resize(static_cast<std::size_t>(n) * h);
    c.feat.resize(static_cast<std::size_t>(n) * h);
    affine_forward(c.cells, n, in, h, p.at(kCellW).value, p.at(kCellB).value, c.pre);
    tanh_forward(c.pre, c.feat);
    c.weights.resize(static_cast<std::size_t>(n));
    c.context.assign(static_cast<std::size_t>(h), 0.0);
    const double* query = p.at(kNameEmb).value.row(name_id);
    attention_pool_forward(std::span<const double>(query, static_cast<std::size_t>(h)),
                           c.feat, c.feat, n, h, c.weights, c.context);
}

void encode_backward(const PolicyParams& p, const EncodeCache& c,
                     std::span<const double> dcontext, GradBuffer& g) {
    const ModelConfig& cfg = p.config;
    const int n = cfg.grid * cfg.grid;
    const int in = cfg.cell_inputs();
    const int h = cfg.hidden;
    std::vector<double> dfeat(static_cast<std::size_t>(n) * h, 0.0);
    const double* query = p.at(kNameEmb).value.row(c.name_id);
    std::span<double> dquery(g[kNameEmb].data() + static_cast<std::size_t>(c.name_id) * h,
                             static_cast<std::size_t>(h));
    // keys == values == feat, so both gradient streams land in dfeat.
    attention_pool_backward(dcontext, {}, std::span<const double>(query, static_cast<std::size_t>(h)),
                            c.feat, c.feat, c.weights, n, h, dquery, dfeat, dfeat);
    std::vector<double> dpre(static_cast<std::size_t>(n) * h, 0.0);
    tanh_backward(dfeat, c.feat, dpre);
    Tensor dw = tensor_view(g[kCellW], p.at(kCellW).value.shape);
    Tensor db = tensor_view(g[kCellB], p.at(kCellB).value.shape);
    affine_backward(dpre, c.cells, n, in, h, p.at(kCellW).value, {}, dw, db);
    g[kCellW] = std::move(dw.v);
    g[kCellB] = std::move(db.v);
}

// ---- bbox head ------------------------------------------------------------------

void bbox_forward(const PolicyParams& p, std::span<const double> context, BBoxCache& c) {
    const int h = p.config.hidden;
    c.h_pre.resize(static_cast<std::size_t>(h));
    c.h_act.resize(static_cast<std::size_t>(h));
    affine_forward(context, 1, h, h, p.at(kBBoxW1).value, p.at(kBBoxB1).value, c.h_pre);
    tanh_forward(c.h_pre, c.h_act);
    affine_forward(c.h_act, 1, h, 4, p.at(kBBoxW2).value, p.at(kBBoxB2).value, c.raw_pre);
    sigmoid_forward(c.raw_pre, c.raw);
    const double cx = c.raw[0], cy = c.raw[1], w = c.raw[2], hh = c.raw[3];
    c.unclipped = {cx - w / 2.0, cy - hh / 2.0, cx + w / 2.0, cy + hh / 2.0};
    for (int i = 0; i < 4; ++i) {
        c.corners[static_cast<std::size_t>(i)] =
            std::min(1.0, std::max(0.0, c.unclipped[static_cast<std::size_t>(i)]));
    }
}

void bbox_backward(const PolicyParams& p, const BBoxCache& c,
                   std::span<const double> context, const std::array<double, 4>& dcorners,
                   std::span<double> dcontext, GradBuffer& g) {
    const int h = p.config.hidden;
    std::array<double, 4> draw{};  // d(cx, cy, w, h)
    for (int i = 0; i < 4; ++i) {
        // Clipping gates the gradient.
        if (c.unclipped[static_cast<std::size_t>(i)] < 0.0 ||
            c.unclipped[static_cast<std::size_t>(i)] > 1.0) {
            continue;
        }
        const double d = dcorners[static_cast<std::size_t>(i)];
        const int center = (i == 0 || i == 2) ? 0 : 1;
        const int extent = (i == 0 || i == 2) ? 2 : 3;
        draw[static_cast<std::size_t>(center)] += d;
        draw[static_cast<std::size_t>(extent)] += (i < 2 ? -0.5 : 0.5) * d;
    }
    std::array<double, 4> dpre{};
    sigmoid_backward(draw, c.raw, dpre);
    std::vector<double> dh_act(static_cast<std::size_t>(h), 0.0);
    {
        Tensor dw = tensor_view(g[kBBoxW2], p.at(kBBoxW2).value.shape);
        Tensor db = tensor_view(g[kBBoxB2], p.at(kBBoxB2).value.shape);
        affine_backward(dpre, c.h_act, 1, h, 4, p.at(kBBoxW2).value, dh_act, dw, db);
        g[kBBoxW2] = std::move(dw.v);
        g[kBBoxB2] = std::move(db.v);
    }
    std::vector<double> dh_pre(static_cast<std::size_t>(h), 0.0);
    tanh_backward(dh_act, c.h_act, dh_pre);
    {
        Tensor dw = tensor_view(g[kBBoxW1], p.at(kBBoxW1).value.shape);
        Tensor db = tensor_view(g[kBBoxB1], p.at(kBBoxB1).value.shape);
        affine_backward(dh_pre, context, 1, h, h, p.at(kBBoxW1).value, dcontext, dw, db);
        g[kBBoxW1] = std::move(dw.v);
        g[kBBoxB1] = std::move(db.v);
    }
}

// ---- FiLM -----------------------------------------------------------------------

void film_forward(const PolicyParams& p, std::span<const double> hidden,
                  const std::array<double, 4>& box, bool bypass, FilmCache& c) {
    const int h = p.config.hidden;
    c.bypass = bypass;
    c.box = box;
    c.in.assign(hidden.begin(), hidden.end());
    c.out.resize(static_cast<std::size_t>(h));
    if (bypass) {
        c.out = c.in;
        return;
    }
    c.gamma_beta.resize(static_cast<std::size_t>(2 * h));
    affine_forward(box, 1, 4, 2 * h, p.at(kFilmW).value, p.at(kFilmB).value, c.gamma_beta);
    for (int j = 0; j < h; ++j) {
        c.out[static_cast<std::size_t>(j)] =
            c.in[static_cast<std::size_t>(j)] * (1.0 + c.gamma_beta[static_cast<std::size_t>(j)]) +
            c.gamma_beta[static_cast<std::size_t>(h + j)];
    }
}

void film_backward(const PolicyParams& p, const FilmCache& c, std::span<const double> dout,
                   std::span<double> dhidden, std::array<double, 4>& dbox, GradBuffer& g) {
    const int h = p.config.hidden;
    if (c.bypass) {
        add_scaled(dhidden, dout);
        return;
    }
    std::vector<double> dgb(static_cast<std::size_t>(2 * h), 0.0);
    for (int j = 0; j < h; ++j) {
        dhidden[static_cast<std::size_t>(j)] +=
            dout[static_cast<std::size_t>(j)] * (1.0 + c.gamma_beta[static_cast<std::size_t>(j)]);
        dgb[static_cast<std::size_t>(j)] =
            dout[static_cast<std::size_t>(j)] * c.in[static_cast<std::size_t>(j)];
        dgb[static_cast<std::size_t>(h + j)] = dout[static_cast<std::size_t>(j)];
    }
    Tensor dw = tensor_view(g[kFilmW], p.at(kFilmW).value.shape);
    Tensor db = tensor_view(g[kFilmB], p.at(kFilmB).value.shape);
    std::span<double> dbox_span(dbox.data(), 4);
    affine_backward(dgb, c.box, 1, 4, 2 * h, p.at(kFilmW).value, dbox_span, dw, db);
    g[kFilmW] = std::move(dw.v);
    g[kFilmB] = std::move(db.v);
}

// ---- trunk ----------------------------------------------------------------------

void trunk_forward(const PolicyParams& p, std::span<const double> context,
                   const std::array<double, 5>& proprio, int skill_id,
                   const std::array<double, 4>& box, bool inject, TrunkCache& c,
                   bool drop_context) {
    const ModelConfig& cfg = p.config;
    if (skill_id < 0 || skill_id >= cfg.n_skills) throw UsageError("trunk: bad skill id");
    const int h = cfg.hidden;
    c.skill_id = skill_id;
    c.drop_context = drop_context;
    c.input.resize(static_cast<std::size_t>(cfg.trunk_inputs()));
    if (drop_context) {
        std::fill(c.input.begin(), c.input.begin() + h, 0.0);
    } else {
        std::copy(context.begin(), context.end(), c.input.begin());
    }
    std::copy(proprio.begin(), proprio.end(), c.input.begin() + h);
    const double* skill = p.at(kSkillEmb).value.row(skill_id);
    std::copy(skill, skill + h, c.input.begin() + h + 5);
    c.h_pre.resize(static_cast<std::size_t>(h));
    c.h_act.resize(static_cast<std::size_t>(h));
    affine_forward(c.input, 1, cfg.trunk_inputs(), h, p.at(kTrunkW1).value,
                   p.at(kTrunkB1).value, c.h_pre);
    tanh_forward(c.h_pre, c.h_act);
    film_forward(p, c.h_act, box, !inject, c.film);
}

void trunk_backward(const PolicyParams& p, const TrunkCache& c,
                    std::span<const double> dfilm_out, std::span<double> dcontext,
                    std::array<double, 4>& dbox, GradBuffer& g) {
    const ModelConfig& cfg = p.config;
    const int h = cfg.hidden;
    std::vector<double> dh_act(static_cast<std::size_t>(h), 0.0);
    film_backward(p, c.film, dfilm_out, dh_act, dbox, g);
    std::vector<double> dh_pre(static_cast<std::size_t>(h), 0.0);
    tanh_backward(dh_act, c.h_act, dh_pre);
    std::vector<double> dinput(static_cast<std::size_t>(cfg.trunk_inputs()), 0.0);
    Tensor dw = tensor_view(g[kTrunkW1], p.at(kTrunkW1).value.shape);
    Tensor db = tensor_view(g[kTrunkB1], p.at(kTrunkB1).value.shape);
    affine_backward(dh_pre, c.input, 1, cfg.trunk_inputs(), h, p.at(kTrunkW1).value,
                    dinput, dw, db);
    g[kTrunkW1] = std::move(dw.v);
    g[kTrunkB1] = std::move(db.v);
    if (!c.drop_context) {
        for (int j = 0; j < h; ++j) dcontext[static_cast<std::size_t>(j)] += dinput[static_cast<std::size_t>(j)];
    }
    double* dskill = g[kSkillEmb].data() + static_cast<std::size_t>(c.skill_id) * h;
    for (int j = 0; j < h; ++j) dskill[j] += dinput[static_cast<std::size_t>(h + 5 + j)];
}

void regression_forward(const PolicyParams& p, const TrunkCache& t, RegressionCache& c) {
    const int h = p.config.hidden;
    affine_forward(t.film.out, 1, h, 4, p.at(kTrunkW2).value, p.at(kTrunkB2).value, c.a_pre);
    tanh_forward(c.a_pre, c.action);
}

void regression_backward(const PolicyParams& p, const TrunkCache& t,
                         const RegressionCache& c, const std::array<double, 4>& daction,
                         std::span<double> dfilm_out, GradBuffer& g) {
    const int h = p.config.hidden;
    std::array<double, 4> dpre{};
    tanh_backward(daction, c.action, dpre);
    Tensor dw = tensor_view(g[kTrunkW2], p.at(kTrunkW2).value.shape);
    Tensor db = tensor_view(g[kTrunkB2], p.at(kTrunkB2).value.shape);
    affine_backward(dpre, t.film.out, 1, h, 4, p.at(kTrunkW2).value, dfilm_out, dw, db);
    g[kTrunkW2] = std::move(dw.v);
    g[kTrunkB2] = std::move(db.v);
}

// ---- composites -----------------------------------------------------------------

void forward_robot(const PolicyParams& p, const FeatureImage& img,
                   const std::array<double, 5>& proprio, const Instruction& instr,
                   bool use_bbox, RobotForward& f, bool drop_context) {
    f.use_bbox = use_bbox;
    encode_forward(p, img, instr.name_id, f.enc);
    std::array<double, 4> box{};
    if (use_bbox) {
        bbox_forward(p, f.enc.context, f.bb);
        box = f.bb.corners;
    }
    trunk_forward(p, f.enc.context, proprio, instr.skill_id, box, use_bbox, f.trunk,
                  drop_context);
    if (p.config.head == ModelConfig::Head::regression) {
        regression_forward(p, f.trunk, f.reg);
    }
}

void backward_robot(const PolicyParams& p, const RobotForward& f,
                    std::span<const double> dfilm_out,
                    const std::array<double, 4>& dcorners_direct, GradBuffer& g) {
    const int h = p.config.hidden;
    std::vector<double> dcontext(static_cast<std::size_t>(h), 0.0);
    std::array<double, 4> dbox_film{};
    // The injected box is detached: the action loss shapes the trunk and the
    // film map, while the bbox head answers to box supervision alone.
    trunk_backward(p, f.trunk, dfilm_out, dcontext, dbox_film, g);
    if (f.use_bbox) {
        bool any = false;
        for (double d : dcorners_direct) any = any || d != 0.0;
        if (any) bbox_backward(p, f.bb, f.enc.context, dcorners_direct, dcontext, g);
    }
    encode_backward(p, f.enc, dcontext, g);
}

std::array<double, 4> forward_grounding(const PolicyParams& p, const FeatureImage& img,
                                        int name_id) {
    EncodeCache enc;
    encode_forward(p, img, name_id, enc);
    BBoxCache bb;
    bbox_forward(p, enc.context, bb);
    return bb.corners;
}

// ---- diffusion --------------------------------------------------------------------

DiffusionSchedule::DiffusionSchedule(int steps_, double beta_lo, double beta_hi)
    : steps(steps_) {
    if (steps < 1) throw UsageError("diffusion schedule needs at least one step");
    beta.assign(static_cast<std::size_t>(steps) + 1, 0.0);
    alpha.assign(static_cast<std::size_t>(steps) + 1, 1.0);
    alpha_bar.assign(static_cast<std::size_t>(steps) + 1, 1.0);
    for (int t = 1; t <= steps; ++t) {
        const double frac = steps == 1 ? 0.0 : static_cast<double>(t - 1) / (steps - 1);
        beta[static_cast<std::size_t>(t)] = beta_lo + (beta_hi - beta_lo) * frac;
        alpha[static_cast<std::size_t>(t)] = 1.0 - beta[static_cast<std::size_t>(t)];
        alpha_bar[static_cast<std::size_t>(t)] =
            alpha_bar[static_cast<std::size_t>(t - 1)] * alpha[static_cast<std::size_t>(t)];
    }
}

void time_features(int t, int steps, int dim, std::span<double> out) {
    const double frac = static_cast<double>(t) / steps;
    for (int k = 0; k < dim / 2; ++k) {
        const double f = 3.14159265358979323846 * std::pow(2.0, k) * frac;
        out[static_cast<std::size_t>(2 * k)] = std::sin(f);
        out[static_cast<std::size_t>(2 * k + 1)] = std::cos(f);
    }
}

void denoiser_forward(const PolicyParams& p, const std::array<double, 4>& noisy, int t,
                      std::span<const double> cond, const std::array<double, 4>& box,
                      DenoiserCache& c) {
    const ModelConfig& cfg = p.config;
    if (cfg.head != ModelConfig::Head::diffusion) {
        throw UsageError("denoiser: model is not configured with a diffusion head");
    }
    const int h = cfg.hidden;
    c.t = t;
    c.input.assign(static_cast<std::size_t>(cfg.denoiser_inputs()), 0.0);
    std::copy(noisy.begin(), noisy.end(), c.input.begin());
    time_features(t, cfg.diffusion_steps, cfg.t_emb_dim,
                  std::span<double>(c.input.data() + 4, static_cast<std::size_t>(cfg.t_emb_dim)));
    std::copy(cond.begin(), cond.end(), c.input.begin() + 4 + cfg.t_emb_dim);
    std::copy(box.begin(), box.end(), c.input.begin() + 4 + cfg.t_emb_dim + h);
    c.h_pre.resize(static_cast<std::size_t>(h));
    c.h_act.resize(static_cast<std::size_t>(h));
    affine_forward(c.input, 1, cfg.denoiser_inputs(), h, p.at(kDenW1).value,
                   p.at(kDenB1).value, c.h_pre);
    tanh_forward(c.h_pre, c.h_act);
    affine_forward(c.h_act, 1, h, 4, p.at(kDenW2).value, p.at(kDenB2).value, c.eps_hat);
}

void denoiser_backward(const PolicyParams& p, const DenoiserCache& c,
                       const std::array<double, 4>& deps, std::span<double> dcond,
                       std::array<double, 4>& dbox, GradBuffer& g) {
    const ModelConfig& cfg = p.config;
    const int h = cfg.hidden;
    std::vector<double> dh_act(static_cast<std::size_t>(h), 0.0);
    {
        Tensor dw = tensor_view(g[kDenW2], p.at(kDenW2).value.shape);
        Tensor db = tensor_view(g[kDenB2], p.at(kDenB2).value.shape);
        affine_backward(deps, c.h_act, 1, h, 4, p.at(kDenW2).value, dh_act, dw, db);
        g[kDenW2] = std::move(dw.v);
        g[kDenB2] = std::move(db.v);
    }
    std::vector<double> dh_pre(static_cast<std::size_t>(h), 0.0);
    tanh_backward(dh_act, c.h_act, dh_pre);
    std::vector<double> dinput(static_cast<std::size_t>(cfg.denoiser_inputs()), 0.0);
    {
        Tensor dw = tensor_view(g[kDenW1], p.at(kDenW1).value.shape);
        Tensor db = tensor_view(g[kDenB1], p.at(kDenB1).value.shape);
        affine_backward(dh_pre, c.input, 1, cfg.denoiser_inputs(), h, p.at(kDenW1).value,
                        dinput, dw, db);
        g[kDenW1] = std::move(dw.v);
        g[kDenB1] = std::move(db.v);
    }
    for (int j = 0; j < h; ++j) {
        dcond[static_cast<std::size_t>(j)] += dinput[static_cast<std::size_t>(4 + cfg.t_emb_dim + j)];
    }
    for (int j = 0; j < 4; ++j) {
        dbox[static_cast<std::size_t>(j)] += dinput[static_cast<std::size_t>(4 + cfg.t_emb_dim + cfg.hidden + j)];
    }
}

double diffusion_loss_forward(const PolicyParams& p, const TrunkCache& trunk,
                              const std::array<double, 4>& box_for_denoiser,
                              const std::array<double, 4>& clean_action, Rng& rng,
                              DiffusionLossCache& c) {
    const DiffusionSchedule sched(p.config.diffusion_steps, p.config.beta_lo,
                                  p.config.beta_hi);
    const int t = 1 + rng.uniform_int(sched.steps);
    for (double& e : c.eps) e = rng.normal();
    const double ab = sched.alpha_bar[static_cast<std::size_t>(t)];
    std::array<double, 4> noisy{};
    for (int i = 0; i < 4; ++i) {
        noisy[static_cast<std::size_t>(i)] = std::sqrt(ab) * clean_action[static_cast<std::size_t>(i)] +
                                             std::sqrt(1.0 - ab) * c.eps[static_cast<std::size_t>(i)];
    }
    denoiser_forward(p, noisy, t, trunk.film.out, box_for_denoiser, c.den);
    return mse_loss(c.den.eps_hat, c.eps, c.deps);
}

void diffusion_loss_backward(const PolicyParams& p, const DiffusionLossCache& c,
                             std::span<double> dcond, std::array<double, 4>& dbox,
                             GradBuffer& g) {
    denoiser_backward(p, c.den, c.deps, dcond, dbox, g);
}

std::array<double, 4> ancestral_sample(const DiffusionSchedule& sched,
                                       const EpsModel& eps_model, Rng& rng,
                                       bool inject_noise) {
    std::array<double, 4> a{};
    for (double& x : a) x = rng.normal();
    for (int t = sched.steps; t >= 1; --t) {
        const double ab = sched.alpha_bar[static_cast<std::size_t>(t)];
        const double al = sched.alpha[static_cast<std::size_t>(t)];
        const double bt = sched.beta[static_cast<std::size_t>(t)];
        const std::array<double, 4> eps = eps_model(a, t);
        for (int i = 0; i < 4; ++i) {
            a[static_cast<std::size_t>(i)] =
                (a[static_cast<std::size_t>(i)] -
                 bt / std::sqrt(1.0 - ab) * eps[static_cast<std::size_t>(i)]) /
                std::sqrt(al);
        }
        if (t > 1) {
            const double ab_prev = sched.alpha_bar[static_cast<std::size_t>(t - 1)];
            const double sigma = std::sqrt((1.0 - ab_prev) / (1.0 - ab) * bt);
            for (double& x : a) x += inject_noise ? sigma * rng.normal() : 0.0;
        }
    }
    for (double& x : a) x = std::min(1.0, std::max(-1.0, x));
    return a;
}

std::array<double, 4> diffusion_sample(const PolicyParams& p, const TrunkCache& trunk,
                                       const std::array<double, 4>& box_for_denoiser,
                                       Rng& rng) {
    const DiffusionSchedule sched(p.config.diffusion_steps, p.config.beta_lo,
                                  p.config.beta_hi);
    DenoiserCache den;
    return ancestral_sample(
        sched,
        [&](const std::array<double, 4>& noisy, int t) {
            denoiser_forward(p, noisy, t, trunk.film.out, box_for_denoiser, den);
            return den.eps_hat;
        },
        rng);
}

}  // namespace objbridge

#include "objbridge/training.h"

#include <cmath>
#include <cstring>
#include <fstream>

#include "objbridge/errors.h"

namespace objbridge {
constexpr double kNameEmbLrBoost = 320.0;
}  // namespace objbridge
#include "objbridge/format.h"

namespace objbridge {

const char* ablation_name(Ablation a) {
    switch (a) {
        case Ablation::full: return "full";
        case Ablation::no_bbox: return "no_bbox";
        case Ablation::robot_only: return "robot_only";
    }
    return "?";
}

Ablation ablation_from_name(const std::string& s) {
    if (s == "full") return Ablation::full;
    if (s == "no_bbox") return Ablation::no_bbox;
    if (s == "robot_only") return Ablation::robot_only;
    throw UsageError("unknown ablation: " + s);
}

// ---- losses -------------------------------------------------------------------

namespace {

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

// Binary presence term; returns BCE and backprops dz = sigmoid(z) - label.
double presence_term(const PolicyParams& p, const FeatureImage& img, int name_id,
                     double label, double weight, GradBuffer& g) {
    EncodeCache enc;
    encode_forward(p, img, name_id, enc);
    const int h = p.config.hidden;
    std::array<double, 1> z{};
    affine_forward(enc.context, 1, h, 1, p.at(kPresenceW).value, p.at(kPresenceB).value, z);
    const double loss = label > 0.5 ? softplus(-z[0]) : softplus(z[0]);
    const double sig = 1.0 / (1.0 + std::exp(-z[0]));
    const std::array<double, 1> dz{weight * (sig - label)};
    std::vector<double> dcontext(static_cast<std::size_t>(h), 0.0);
    Tensor dw;
    dw.shape = p.at(kPresenceW).value.shape;
    dw.v = g[kPresenceW];
    Tensor db;
    db.shape = p.at(kPresenceB).value.shape;
    db.v = g[kPresenceB];
    affine_backward(dz, enc.context, 1, h, 1, p.at(kPresenceW).value, dcontext, dw, db);
    g[kPresenceW] = std::move(dw.v);
    g[kPresenceB] = std::move(db.v);
    encode_backward(p, enc, dcontext, g);
    return loss;
}

}  // namespace

double loss_vl(const PolicyParams& p, const GroundingSample& sample, Ablation ablation,
               int n_real_names, Rng& rng, GradBuffer& g) {
    if (ablation == Ablation::robot_only) {
        throw UsageError("loss_vl called with a robot_only configuration");
    }
    if (ablation == Ablation::full) {
        EncodeCache enc;
        encode_forward(p, sample.image, sample.name_id, enc);
        BBoxCache bb;
        bbox_forward(p, enc.context, bb);
        const std::array<double, 4> target = dequantize_box(sample.bbox);
        std::array<double, 4> dcorners{};
        const double loss = mse_loss(bb.corners, target, dcorners);
        const int h = p.config.hidden;
        std::vector<double> dcontext(static_cast<std::size_t>(h), 0.0);
        bbox_backward(p, bb, enc.context, dcorners, dcontext, g);
        encode_backward(p, enc, dcontext, g);
        return loss;
    }
    // no_bbox: presence classification replaces the box target.
    int negative = rng.uniform_int(n_real_names - 1);
    if (negative >= sample.name_id) ++negative;
    const double pos = presence_term(p, sample.image, sample.name_id, 1.0, 0.5, g);
    const double neg = presence_term(p, sample.image, negative, 0.0, 0.5, g);
    return 0.5 * (pos + neg);
}

LossParts loss_robot(const PolicyParams& p, const RobotStep& step, Ablation ablation,
                     const TrainConfig& cfg, Rng& rng, GradBuffer& g) {
    const bool use_bbox = ablation == Ablation::full;
    // Context dropout (training only): the action stays fittable through the
    // injected box + proprio alone, which is what carries skills to objects
    // that never appear with actions.
    const bool drop_context = use_bbox ? rng.bernoulli(0.5) : false;
    RobotForward f;
    forward_robot(p, step.image, step.proprio, step.instruction, use_bbox, f, drop_context);

    LossParts parts;
    const int h = p.config.hidden;
    std::vector<double> dfilm_out(static_cast<std::size_t>(h), 0.0);
    std::array<double, 4> dcorners_direct{};
    std::array<double, 4> dbox_from_denoiser{};

    if (p.config.head == ModelConfig::Head::regression) {
        const std::array<double, 4> target = {step.action.dx, step.action.dy,
                                              step.action.dtheta, step.action.grip};
        std::array<double, 4> daction{};
        parts.action = mse_loss(f.reg.action, target, daction);
        for (double& d : daction) d *= cfg.lambda_act;
        regression_backward(p, f.trunk, f.reg, daction, dfilm_out, g);
    } else {
        const std::array<double, 4> clean = {step.action.dx, step.action.dy,
                                             step.action.dtheta, step.action.grip};
        const std::array<double, 4> box = use_bbox ? f.bb.corners : std::array<double, 4>{};
        DiffusionLossCache dc;
        parts.action = diffusion_loss_forward(p, f.trunk, box, clean, rng, dc);
        for (double& d : dc.deps) d *= cfg.lambda_act;
        diffusion_loss_backward(p, dc, dfilm_out, dbox_from_denoiser, g);
    }

    if (use_bbox) {
        const auto [name, target_box] = parse_reasoning(step.reasoning);
        const std::array<double, 4> target = dequantize_box(target_box);
        std::array<double, 4> dcorners{};
        parts.bbox = mse_loss(f.bb.corners, target, dcorners);
        for (int i = 0; i < 4; ++i) {
            dcorners_direct[static_cast<std::size_t>(i)] =
                cfg.lambda_bbox * dcorners[static_cast<std::size_t>(i)];
        }
    }
    (void)dbox_from_denoiser;  // detached along with the film route
    backward_robot(p, f, dfilm_out, dcorners_direct, g);
    parts.total = cfg.lambda_act * parts.action + (use_bbox ? cfg.lambda_bbox * parts.bbox : 0.0);
    return parts;
}

// ---- batch accumulation ----------------------------------------------------------

BatchStats accumulate_batch(PolicyParams& p, const HybridCorpus& corpus,
                            const HybridBatch& batch, const TrainConfig& cfg,
                            std::int64_t global_step,
                            std::vector<GradBuffer>& workspace, Parallelism par) {
    const int n = static_cast<int>(batch.elements.size());
    while (static_cast<int>(workspace.size()) < n) workspace.emplace_back(p);
    const int n_real_names = p.config.vocab_slots - p.config.reserved_slots;
    std::vector<double> vl_losses(static_cast<std::size_t>(n), 0.0);
    std::vector<LossParts> robot_losses(static_cast<std::size_t>(n));

    parallel_for(n, par, [&](int i) {
        GradBuffer& g = workspace[static_cast<std::size_t>(i)];
        g.clear();
        Rng rng(mix64(cfg.seed, static_cast<std::uint64_t>(global_step), i));
        const auto& [tag, idx] = batch.elements[static_cast<std::size_t>(i)];
        if (tag == SourceTag::vl) {
            vl_losses[static_cast<std::size_t>(i)] =
                loss_vl(p, corpus.vl[static_cast<std::size_t>(idx)], cfg.ablation,
                        n_real_names, rng, g);
        } else {
            robot_losses[static_cast<std::size_t>(i)] =
                loss_robot(p, corpus.step(idx), cfg.ablation, cfg, rng, g);
        }
    });

    BatchStats stats;
    for (int i = 0; i < n; ++i) {
        workspace[static_cast<std::size_t>(i)].add_to(p);  // fixed reduction order
        const auto& [tag, idx] = batch.elements[static_cast<std::size_t>(i)];
        if (tag == SourceTag::vl) {
            stats.loss_vl_sum += vl_losses[static_cast<std::size_t>(i)];
            ++stats.n_vl;
        } else {
            stats.loss_robot_total_sum += robot_losses[static_cast<std::size_t>(i)].total;
            stats.loss_robot_action_sum += robot_losses[static_cast<std::size_t>(i)].action;
            ++stats.n_robot;
        }
    }
    return stats;
}

// ---- metrics ---------------------------------------------------------------------

void save_metrics_csv(const std::vector<MetricsRow>& rows, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw UsageError("cannot open metrics file " + path);
    out << "step,loss_vl,loss_robot,probe_iou\n";
    for (const MetricsRow& r : rows) {
        out << r.step << ',' << double_repr(r.loss_vl) << ',' << double_repr(r.loss_robot)
            << ',' << double_repr(r.probe_iou) << '\n';
    }
}

double probe_mean_iou(const PolicyParams& p, const std::vector<GroundingSample>& probe,
                      Parallelism par) {
    if (probe.empty()) return 0.0;
    std::vector<double> ious(probe.size(), 0.0);
    parallel_for(static_cast<int>(probe.size()), par, [&](int i) {
        const GroundingSample& s = probe[static_cast<std::size_t>(i)];
        const std::array<double, 4> pred = forward_grounding(p, s.image, s.name_id);
        ious[static_cast<std::size_t>(i)] = iou(quantize_box(pred), s.bbox);
    });
    double sum = 0.0;
    for (double v : ious) sum += v;
    return sum / static_cast<double>(probe.size());
}

// ---- query prototypes ---------------------------------------------------------------
//
// Name queries are estimated, not descended: every sample that carries a box
// (grounding pairs; robot steps with localization reasoning) contributes the
// mean key feature inside its box to an exponential moving prototype of the
// instruction's name, and the query row is the rescaled prototype direction.
// Configurations whose losses discard boxes never update prototypes, so their
// queries only ever see plain gradient steps.

namespace {

constexpr double kProtoRate = 0.15;
constexpr double kQueryScale = 60.0;  // matched to the objectness prior

struct ProtoTable {
    std::vector<std::vector<double>> ema;
    std::vector<int> seen;

    explicit ProtoTable(const ModelConfig& cfg)
        : ema(static_cast<std::size_t>(cfg.vocab_slots),
              std::vector<double>(static_cast<std::size_t>(cfg.hidden), 0.0)),
          seen(static_cast<std::size_t>(cfg.vocab_slots), 0) {}
};

bool sample_prototype(const PolicyParams& p, const FeatureImage& img, const BBox& bbox,
                      std::vector<double>& out) {
    const ModelConfig& cfg = p.config;
    const int h = cfg.hidden;
    const int in = cfg.cell_inputs();
    const int n = cfg.grid * cfg.grid;
    std::vector<double> cells(static_cast<std::size_t>(n) * in);
    for (int iy = 0; iy < cfg.grid; ++iy) {
        for (int ix = 0; ix < cfg.grid; ++ix) {
            double* row = cells.data() + (static_cast<std::size_t>(iy) * cfg.grid + ix) * in;
            const double* cell = img.cell(iy, ix);
            for (int c = 0; c < img.channels; ++c) row[c] = cell[c];
            row[img.channels] = (ix + 0.5) / cfg.grid;
            row[img.channels + 1] = (iy + 0.5) / cfg.grid;
        }
    }
    std::vector<double> pre(static_cast<std::size_t>(n) * h), feat(static_cast<std::size_t>(n) * h);
    affine_forward(cells, n, in, h, p.at(kCellW).value, p.at(kCellB).value, pre);
    tanh_forward(pre, feat);
    const std::array<double, 4> box = dequantize_box(bbox);
    out.assign(static_cast<std::size_t>(h), 0.0);
    int count = 0;
    for (int iy = 0; iy < cfg.grid; ++iy) {
        const double cy = (iy + 0.5) / cfg.grid;
        if (cy < box[1] || cy > box[3]) continue;
        for (int ix = 0; ix < cfg.grid; ++ix) {
            const double cx = (ix + 0.5) / cfg.grid;
            if (cx < box[0] || cx > box[2]) continue;
            if (img.cell(iy, ix)[cfg.attr_dim] < 0.5) continue;  // occupied cells only
            const double* f = feat.data() + (static_cast<std::size_t>(iy) * cfg.grid + ix) * h;
            for (int j = 0; j < h; ++j) out[static_cast<std::size_t>(j)] += f[j];
            ++count;
        }
    }
    if (count == 0) return false;
    for (double& v : out) v /= count;
    zero_positional_key_dims(cfg, out.data());
    return true;
}

void update_prototype(ProtoTable& table, int name_id, const std::vector<double>& proto) {
    auto& ema = table.ema[static_cast<std::size_t>(name_id)];
    int& seen = table.seen[static_cast<std::size_t>(name_id)];
    const double rate = seen == 0 ? 1.0 : kProtoRate;
    for (std::size_t j = 0; j < ema.size(); ++j) {
        ema[j] = (1.0 - rate) * ema[j] + rate * proto[j];
    }
    ++seen;
}

void assign_queries(PolicyParams& p, const ProtoTable& table) {
    const int h = p.config.hidden;
    for (int id = 0; id < p.config.vocab_slots; ++id) {
        if (table.seen[static_cast<std::size_t>(id)] == 0) continue;
        const auto& ema = table.ema[static_cast<std::size_t>(id)];
        double norm = 0.0;
        for (double v : ema) norm += v * v;
        norm = std::sqrt(norm);
        if (norm < 1e-12) continue;
        double* row = p.at(kNameEmb).value.row(id);
        for (int j = 0; j < h; ++j) row[j] = ema[static_cast<std::size_t>(j)] / norm * kQueryScale;
    }
}

}  // namespace

// ---- train loop -------------------------------------------------------------------

TrainResult train(const ModelConfig& model_cfg, const TrainConfig& cfg,
                  const HybridCorpus& corpus, const std::vector<GroundingSample>& probe,
                  Parallelism par, const std::vector<ObjectSpec>& vocab) {
    const bool robot_only = cfg.ablation == Ablation::robot_only;
    if (corpus.robot.empty()) throw UsageError("train: robot corpus is empty");
    if (!robot_only && corpus.vl.empty()) throw UsageError("train: vl corpus is empty");

    TrainResult result;
    result.checkpoint.model = model_cfg;
    result.checkpoint.train = cfg;
    PolicyParams& params = result.checkpoint.params;
    params = PolicyParams::init(model_cfg, cfg.seed);
    (void)vocab;
    std::vector<Parameter*> plist = params.all();
    AdamState& adam = result.checkpoint.adam;
    adam = AdamState::init(plist, cfg.lr);
    // Name queries see only their own samples, so per step they move far too
    // little at the base rate; a constant per-module boost evens that out.
    // Prototype-estimated queries are frozen against gradient descent in the
    // full configuration; the no-box ablations keep plain (boosted) steps,
    // since presence/action gradients are all their queries ever get.
    adam.lr_scale[kNameEmb] = cfg.ablation == Ablation::full ? 0.0 : kNameEmbLrBoost;

    MixSchedule sched{cfg.ratio_robot, robot_only ? 0 : cfg.ratio_vl, cfg.seed};
    MixStream stream(corpus.total_robot_steps(), static_cast<int>(corpus.vl.size()), sched);
    ProtoTable protos(model_cfg);

    std::vector<GradBuffer> workspace;
    double win_vl = 0.0, win_robot = 0.0;
    int win_vl_n = 0, win_robot_n = 0;
    // Tail average over the last tenth of training: constant-rate Adam orbits
    // its target, and the averaged point is the stand-in for validation-based
    // checkpoint selection.
    const std::int64_t tail_from = cfg.steps - std::max<std::int64_t>(1, cfg.steps / 10) + 1;
    std::vector<std::vector<double>> tail_sum;
    std::int64_t tail_n = 0;
    for (std::int64_t step = 1; step <= cfg.steps; ++step) {
        const HybridBatch batch = next_batch(stream, cfg.batch_size, corpus);
        const BatchStats stats =
            accumulate_batch(params, corpus, batch, cfg, step, workspace, par);
        if (cfg.ablation == Ablation::full) {
            std::vector<double> proto;
            for (const auto& [tag, idx] : batch.elements) {
                if (tag == SourceTag::vl) {
                    const GroundingSample& s = corpus.vl[static_cast<std::size_t>(idx)];
                    if (sample_prototype(params, s.image, s.bbox, proto)) {
                        update_prototype(protos, s.name_id, proto);
                    }
                } else {
                    const RobotStep& st = corpus.step(idx);
                    const auto [nm, box] = parse_reasoning(st.reasoning);
                    if (sample_prototype(params, st.image, box, proto)) {
                        update_prototype(protos, st.instruction.name_id, proto);
                    }
                }
            }
        }
        if (robot_only && stats.n_vl != 0) {
            throw std::logic_error("robot_only stream yielded a vl sample");
        }
        const double batch_loss = stats.loss_vl_sum + stats.loss_robot_total_sum;
        if (!std::isfinite(batch_loss)) {
            throw DataError("train: non-finite loss at step " + std::to_string(step) +
                            " (seed " + std::to_string(cfg.seed) + ")");
        }
        adam_step(plist, adam);
        if (cfg.ablation == Ablation::full) assign_queries(params, protos);
        if (step >= tail_from) {
            if (tail_sum.empty()) {
                for (Parameter* prm : plist) tail_sum.emplace_back(prm->value.v.size(), 0.0);
            }
            for (std::size_t i = 0; i < plist.size(); ++i) {
                const auto& v = plist[i]->value.v;
                for (std::size_t k = 0; k < v.size(); ++k) tail_sum[i][k] += v[k];
            }
            ++tail_n;
        }
        win_vl += stats.loss_vl_sum;
        win_robot += stats.loss_robot_action_sum;
        win_vl_n += stats.n_vl;
        win_robot_n += stats.n_robot;
        if (step % cfg.log_every == 0 || step == cfg.steps) {
            MetricsRow row;
            row.step = step;
            row.loss_vl = win_vl_n > 0 ? win_vl / win_vl_n : 0.0;
            row.loss_robot = win_robot_n > 0 ? win_robot / win_robot_n : 0.0;
            row.probe_iou = probe_mean_iou(params, probe, par);
            result.log.push_back(row);
            win_vl = win_robot = 0.0;
            win_vl_n = win_robot_n = 0;
        }
    }
    for (std::size_t i = 0; i < plist.size(); ++i) {
        auto& v = plist[i]->value.v;
        for (std::size_t k = 0; k < v.size(); ++k) v[k] = tail_sum[i][k] / tail_n;
    }
    result.checkpoint.step = cfg.steps;
    return result;
}

// ---- checkpoint io -----------------------------------------------------------------

namespace {

constexpr std::string_view kCkptMagic = "OBJBRIDGE-CKPT v1";

void put_bytes(std::ofstream& out, const void* p, std::size_t n) {
    out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void put_i64(std::ofstream& out, std::int64_t v) { put_bytes(out, &v, sizeof v); }
void put_f64(std::ofstream& out, double v) { put_bytes(out, &v, sizeof v); }

void put_str(std::ofstream& out, const std::string& s) {
    put_i64(out, static_cast<std::int64_t>(s.size()));
    put_bytes(out, s.data(), s.size());
}

void put_tensor(std::ofstream& out, const Tensor& t) {
    put_i64(out, static_cast<std::int64_t>(t.shape.size()));
    for (int d : t.shape) put_i64(out, d);
    put_i64(out, static_cast<std::int64_t>(t.v.size()));
    put_bytes(out, t.v.data(), t.v.size() * sizeof(double));
}

struct Reader {
    std::ifstream in;
    explicit Reader(const std::string& path) : in(path, std::ios::binary) {
        if (!in) throw UsageError("cannot open checkpoint " + path);
    }
    void bytes(void* p, std::size_t n) {
        in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in.gcount()) != n) {
            throw DataError("checkpoint truncated");
        }
    }
    std::int64_t i64() {
        std::int64_t v;
        bytes(&v, sizeof v);
        return v;
    }
    double f64() {
        double v;
        bytes(&v, sizeof v);
        return v;
    }
    std::string str() {
        const std::int64_t n = i64();
        if (n < 0 || n > 1 << 20) throw DataError("checkpoint: bad string length");
        std::string s(static_cast<std::size_t>(n), '\0');
        bytes(s.data(), s.size());
        return s;
    }
    Tensor tensor() {
        Tensor t;
        const std::int64_t nd = i64();
        if (nd < 0 || nd > 8) throw DataError("checkpoint: bad tensor rank");
        std::int64_t total = 1;
        for (int i = 0; i < nd; ++i) {
            t.shape.push_back(static_cast<int>(i64()));
            total *= t.shape.back();
        }
        const std::int64_t n = i64();
        if (n != total) throw DataError("checkpoint: tensor size mismatch");
        t.v.resize(static_cast<std::size_t>(n));
        bytes(t.v.data(), t.v.size() * sizeof(double));
        return t;
    }
};

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw UsageError("cannot open checkpoint for writing: " + path);
    out << kCkptMagic << "\n";
    const ModelConfig& m = ckpt.model;
    for (std::int64_t v : {static_cast<std::int64_t>(m.attr_dim), static_cast<std::int64_t>(m.grid),
                           static_cast<std::int64_t>(m.hidden), static_cast<std::int64_t>(m.vocab_slots),
                           static_cast<std::int64_t>(m.reserved_slots), static_cast<std::int64_t>(m.n_skills),
                           static_cast<std::int64_t>(m.head), static_cast<std::int64_t>(m.diffusion_steps),
                           static_cast<std::int64_t>(m.t_emb_dim)}) {
        put_i64(out, v);
    }
    put_f64(out, m.beta_lo);
    put_f64(out, m.beta_hi);
    const TrainConfig& t = ckpt.train;
    put_i64(out, t.steps);
    put_i64(out, t.batch_size);
    put_f64(out, t.lr);
    put_i64(out, t.ratio_robot);
    put_i64(out, t.ratio_vl);
    put_f64(out, t.lambda_bbox);
    put_f64(out, t.lambda_act);
    put_i64(out, static_cast<std::int64_t>(t.ablation));
    put_i64(out, static_cast<std::int64_t>(t.seed));
    put_i64(out, t.log_every);
    put_i64(out, ckpt.step);
    put_i64(out, kParamCount);
    for (const Parameter& p : ckpt.params.slots) {
        put_str(out, p.name);
        put_tensor(out, p.value);
    }
    put_i64(out, ckpt.adam.t);
    for (int i = 0; i < kParamCount; ++i) put_f64(out, ckpt.adam.lr_scale[static_cast<std::size_t>(i)]);
    put_f64(out, ckpt.adam.lr);
    put_f64(out, ckpt.adam.beta1);
    put_f64(out, ckpt.adam.beta2);
    put_f64(out, ckpt.adam.eps);
    for (int i = 0; i < kParamCount; ++i) {
        put_tensor(out, ckpt.adam.m[static_cast<std::size_t>(i)]);
        put_tensor(out, ckpt.adam.v[static_cast<std::size_t>(i)]);
    }
    if (!out) throw DataError("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    Reader r(path);
    std::string magic;
    if (!std::getline(r.in, magic)) throw DataError("checkpoint: missing header");
    if (magic != kCkptMagic) {
        throw DataError("checkpoint: bad magic \"" + magic + "\"");
    }
    Checkpoint ckpt;
    ModelConfig& m = ckpt.model;
    m.attr_dim = static_cast<int>(r.i64());
    m.grid = static_cast<int>(r.i64());
    m.hidden = static_cast<int>(r.i64());
    m.vocab_slots = static_cast<int>(r.i64());
    m.reserved_slots = static_cast<int>(r.i64());
    m.n_skills = static_cast<int>(r.i64());
    m.head = static_cast<ModelConfig::Head>(r.i64());
    m.diffusion_steps = static_cast<int>(r.i64());
    m.t_emb_dim = static_cast<int>(r.i64());
    m.beta_lo = r.f64();
    m.beta_hi = r.f64();
    TrainConfig& t = ckpt.train;
    t.steps = static_cast<int>(r.i64());
    t.batch_size = static_cast<int>(r.i64());
    t.lr = r.f64();
    t.ratio_robot = static_cast<int>(r.i64());
    t.ratio_vl = static_cast<int>(r.i64());
    t.lambda_bbox = r.f64();
    t.lambda_act = r.f64();
    t.ablation = static_cast<Ablation>(r.i64());
    t.seed = static_cast<std::uint64_t>(r.i64());
    t.log_every = static_cast<int>(r.i64());
    ckpt.step = r.i64();
    const std::int64_t n_params = r.i64();
    if (n_params != kParamCount) throw DataError("checkpoint: parameter count mismatch");
    ckpt.params = PolicyParams::init(m, 0);
    for (int i = 0; i < kParamCount; ++i) {
        Parameter& p = ckpt.params.slots[static_cast<std::size_t>(i)];
        const std::string name = r.str();
        if (name != p.name) {
            throw DataError("checkpoint: expected parameter " + p.name + ", found " + name);
        }
        Tensor value = r.tensor();
        if (value.shape != p.value.shape) {
            throw DataError("checkpoint: shape mismatch for " + name);
        }
        p.value = std::move(value);
        p.zero_grad();
    }
    ckpt.adam.t = r.i64();
    ckpt.adam.lr_scale.clear();
    for (int i = 0; i < kParamCount; ++i) ckpt.adam.lr_scale.push_back(r.f64());
    ckpt.adam.lr = r.f64();
    ckpt.adam.beta1 = r.f64();
    ckpt.adam.beta2 = r.f64();
    ckpt.adam.eps = r.f64();
    ckpt.adam.m.clear();
    ckpt.adam.v.clear();
    for (int i = 0; i < kParamCount; ++i) {
        Tensor mt = r.tensor();
        Tensor vt = r.tensor();
        if (mt.shape != ckpt.params.slots[static_cast<std::size_t>(i)].value.shape ||
            vt.shape != mt.shape) {
            throw DataError("checkpoint: optimizer state shape mismatch");
        }
        ckpt.adam.m.push_back(std::move(mt));
        ckpt.adam.v.push_back(std::move(vt));
    }
    char extra;
    if (r.in.read(&extra, 1)) throw DataError("checkpoint: trailing bytes");
    return ckpt;
}

void require_head(const Checkpoint& ckpt, ModelConfig::Head head) {
    if (ckpt.model.head != head) {
        throw UsageError("checkpoint action head does not match the requested evaluation");
    }
}

std::uint64_t file_hash(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw UsageError("cannot hash " + path);
    std::uint64_t h = 1469598103934665603ULL;
    char buf[1 << 16];
    while (in.read(buf, sizeof buf) || in.gcount() > 0) {
        const std::streamsize n = in.gcount();
        for (std::streamsize i = 0; i < n; ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 1099511628211ULL;
        }
        if (!in) break;
    }
    return h;
}

// ---- continual learning --------------------------------------------------------------

namespace {

// Prototype imprinting: average the encoder's key features inside the labeled
// box over all of the object's samples, rescaled to the typical norm of the
// trained embeddings.
void imprint_reserved_embeddings(PolicyParams& p,
                                 const std::vector<GroundingSample>& new_vl) {
    const ModelConfig& cfg = p.config;
    const int h = cfg.hidden;
    const int first_reserved = cfg.vocab_slots - cfg.reserved_slots;

    double trained_norm = 0.0;
    for (int i = 0; i < first_reserved; ++i) {
        const double* row = p.at(kNameEmb).value.row(i);
        double sq = 0.0;
        for (int j = 0; j < h; ++j) sq += row[j] * row[j];
        trained_norm += std::sqrt(sq);
    }
    trained_norm /= std::max(1, first_reserved);

    std::vector<int> ids;
    for (const GroundingSample& s : new_vl) {
        if (std::find(ids.begin(), ids.end(), s.name_id) == ids.end()) ids.push_back(s.name_id);
    }
    for (int id : ids) {
        std::vector<double> proto(static_cast<std::size_t>(h), 0.0);
        int cells = 0;
        for (const GroundingSample& s : new_vl) {
            if (s.name_id != id) continue;
            EncodeCache enc;
            encode_forward(p, s.image, id, enc);
            const std::array<double, 4> box = dequantize_box(s.bbox);
            for (int iy = 0; iy < cfg.grid; ++iy) {
                const double cy = (iy + 0.5) / cfg.grid;
                if (cy < box[1] || cy > box[3]) continue;
                for (int ix = 0; ix < cfg.grid; ++ix) {
                    const double cx = (ix + 0.5) / cfg.grid;
                    if (cx < box[0] || cx > box[2]) continue;
                    const double* feat =
                        enc.feat.data() + (static_cast<std::size_t>(iy) * cfg.grid + ix) * h;
                    for (int j = 0; j < h; ++j) proto[static_cast<std::size_t>(j)] += feat[j];
                    ++cells;
                }
            }
        }
        if (cells == 0) continue;  // boxes too small to cover a cell; leave the slot alone
        zero_positional_key_dims(cfg, proto.data());
        double sq = 0.0;
        for (double v : proto) sq += v * v;
        const double norm = std::sqrt(sq);
        if (norm < 1e-12) continue;
        double* row = p.at(kNameEmb).value.row(id);
        for (int j = 0; j < h; ++j) {
            row[j] = proto[static_cast<std::size_t>(j)] / norm * trained_norm;
        }
    }
}

}  // namespace

Checkpoint continual_finetune(const Checkpoint& ckpt,
                              const std::vector<GroundingSample>& new_vl, int epochs,
                              double lr_scale, std::uint64_t seed, Parallelism par) {
    if (new_vl.empty()) throw UsageError("continual_finetune: no new samples");
    const int first_reserved = ckpt.model.vocab_slots - ckpt.model.reserved_slots;
    for (const GroundingSample& s : new_vl) {
        if (s.name_id < first_reserved || s.name_id >= ckpt.model.vocab_slots) {
            throw UsageError("continual_finetune: sample name_id " +
                             std::to_string(s.name_id) + " is not a reserved slot");
        }
    }

    Checkpoint out = ckpt;
    imprint_reserved_embeddings(out.params, new_vl);
    std::vector<Parameter*> plist = out.params.all();
    out.adam.lr = ckpt.adam.lr * lr_scale;

    TrainConfig fcfg = ckpt.train;
    fcfg.ablation = Ablation::full;
    const int batch = fcfg.batch_size;
    const int n = static_cast<int>(new_vl.size());
    const int steps_per_epoch = (n + batch - 1) / batch;
    std::vector<GradBuffer> workspace;
    Rng order_rng(mix64(seed, 0xf1e7));
    const int n_real_names = out.params.config.vocab_slots - out.params.config.reserved_slots;

    for (int epoch = 0; epoch < epochs; ++epoch) {
        std::vector<int> perm(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = i;
        for (int i = n - 1; i > 0; --i) {
            std::swap(perm[static_cast<std::size_t>(i)],
                      perm[static_cast<std::size_t>(order_rng.uniform_int(i + 1))]);
        }
        for (int s = 0; s < steps_per_epoch; ++s) {
            const int lo = s * batch;
            const int hi = std::min(n, lo + batch);
            const int count = hi - lo;
            while (static_cast<int>(workspace.size()) < count) workspace.emplace_back(out.params);
            parallel_for(count, par, [&](int i) {
                GradBuffer& g = workspace[static_cast<std::size_t>(i)];
                g.clear();
                Rng rng(mix64(seed, static_cast<std::uint64_t>(epoch * steps_per_epoch + s), i));
                loss_vl(out.params, new_vl[static_cast<std::size_t>(perm[static_cast<std::size_t>(lo + i)])],
                        Ablation::full, n_real_names, rng, g);
            });
            for (int i = 0; i < count; ++i) workspace[static_cast<std::size_t>(i)].add_to(out.params);
            adam_step(plist, out.adam);
            ++out.step;
        }
    }
    return out;
}

}  // namespace objbridge

#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "objbridge/datagen.h"
#include "objbridge/nn.h"
#include "objbridge/world.h"

namespace objbridge {

struct ModelConfig {
    int attr_dim = 8;       // feature-grid attribute channels
    int grid = 16;          // G
    int hidden = 32;        // h
    int vocab_slots = 64;   // name embedding rows, reserved slots included
    int reserved_slots = 8; // tail of the table kept free for continual learning
    int n_skills = 4;
    enum class Head { regression, diffusion };
    Head head = Head::regression;
    int diffusion_steps = 20;
    double beta_lo = 1e-4, beta_hi = 0.2;  // linear schedule endpoints
    int t_emb_dim = 8;

    int cell_inputs() const { return attr_dim + 1 + 2; }  // channels + cell center
    int trunk_inputs() const { return hidden + 5 + hidden; }
    int denoiser_inputs() const { return 4 + t_emb_dim + hidden + 4; }
    bool operator==(const ModelConfig&) const = default;
};

// Parameter slots in checkpoint / optimizer order.
enum ParamId : int {
    kNameEmb = 0,
    kSkillEmb,
    kCellW, kCellB,
    kBBoxW1, kBBoxB1, kBBoxW2, kBBoxB2,
    kFilmW, kFilmB,
    kTrunkW1, kTrunkB1, kTrunkW2, kTrunkB2,
    kPresenceW, kPresenceB,
    kDenW1, kDenB1, kDenW2, kDenB2,
    kParamCount
};

struct PolicyParams {
    ModelConfig config;
    std::array<Parameter, kParamCount> slots;

    Parameter& at(ParamId id) { return slots[static_cast<std::size_t>(id)]; }
    const Parameter& at(ParamId id) const { return slots[static_cast<std::size_t>(id)]; }
    std::vector<Parameter*> all();
    std::int64_t param_count() const;

    // FiLM map starts at zero so injection is the identity at initialization.
    static PolicyParams init(const ModelConfig& cfg, std::uint64_t seed);
};

// Pretraining stand-in: aligns each listed name's query with the key features
// of a canonical cell carrying that object's attributes, at a scale matched
// to the objectness prior. Co-training keeps this alignment alive through the
// grounding loss; training on robot data alone erodes it as the shared
// encoder drifts. Reserved slots are left untouched; the continual-learning
// path imprints those from data instead.
void imprint_name_embeddings(PolicyParams& p, const std::vector<ObjectSpec>& vocab);

// Zeroes the positional carrier dims of an h-sized key-space vector (queries
// must select by appearance, not place).
void zero_positional_key_dims(const ModelConfig& cfg, double* v);

// Per-sample gradient buffer aligned with the parameter slots; lets a batch
// be accumulated in parallel and reduced in a fixed order.
struct GradBuffer {
    std::vector<std::vector<double>> g;

    explicit GradBuffer(const PolicyParams& p);
    void clear();
    void add_to(PolicyParams& p) const;  // p.grad += g
    std::vector<double>& operator[](ParamId id) { return g[static_cast<std::size_t>(id)]; }
};

// ---- forward caches ---------------------------------------------------------

struct EncodeCache {
    int name_id = 0;
    std::vector<double> cells;    // [G*G, attr+3]
    std::vector<double> pre;      // [G*G, h]
    std::vector<double> feat;     // tanh(pre); keys and values of the pool
    std::vector<double> weights;  // [G*G]
    std::vector<double> context;  // [h]
};

struct BBoxCache {
    std::vector<double> h_pre, h_act;      // [h]
    std::array<double, 4> raw_pre{};       // pre-sigmoid
    std::array<double, 4> raw{};           // (cx, cy, w, h) in (0,1)
    std::array<double, 4> unclipped{};     // corners before clipping
    std::array<double, 4> corners{};       // x1, y1, x2, y2 in [0,1]
};

struct FilmCache {
    std::array<double, 4> box{};
    std::vector<double> gamma_beta;  // [2h]
    std::vector<double> in, out;     // [h]
    bool bypass = false;
};

struct TrunkCache {
    std::vector<double> input;        // [h + 5 + h]
    std::vector<double> h_pre, h_act; // [h]
    FilmCache film;
    int skill_id = 0;
    bool drop_context = false;
};

struct RegressionCache {
    std::array<double, 4> a_pre{};
    std::array<double, 4> action{};
};

struct RobotForward {
    EncodeCache enc;
    BBoxCache bb;
    TrunkCache trunk;
    RegressionCache reg;
    bool use_bbox = true;  // false bypasses FiLM and starves the bbox head
};

// ---- forward / backward pieces ----------------------------------------------

void encode_forward(const PolicyParams& p, const FeatureImage& img, int name_id,
                    EncodeCache& c);
void encode_backward(const PolicyParams& p, const EncodeCache& c,
                     std::span<const double> dcontext, GradBuffer& g);

void bbox_forward(const PolicyParams& p, std::span<const double> context, BBoxCache& c);
void bbox_backward(const PolicyParams& p, const BBoxCache& c,
                   std::span<const double> context, const std::array<double, 4>& dcorners,
                   std::span<double> dcontext, GradBuffer& g);

void film_forward(const PolicyParams& p, std::span<const double> hidden,
                  const std::array<double, 4>& box, bool bypass, FilmCache& c);
void film_backward(const PolicyParams& p, const FilmCache& c, std::span<const double> dout,
                   std::span<double> dhidden, std::array<double, 4>& dbox, GradBuffer& g);

// drop_context zeroes the context block of the trunk input (training-time
// regularizer: the action must also be fittable from the injected box plus
// proprio alone, so the box pathway carries over to objects whose context
// features were never seen with actions).
void trunk_forward(const PolicyParams& p, std::span<const double> context,
                   const std::array<double, 5>& proprio, int skill_id,
                   const std::array<double, 4>& box, bool inject, TrunkCache& c,
                   bool drop_context = false);
// dcontext accumulates; dbox is the FiLM pathway contribution (zero on bypass).
void trunk_backward(const PolicyParams& p, const TrunkCache& c,
                    std::span<const double> dfilm_out, std::span<double> dcontext,
                    std::array<double, 4>& dbox, GradBuffer& g);

void regression_forward(const PolicyParams& p, const TrunkCache& t, RegressionCache& c);
void regression_backward(const PolicyParams& p, const TrunkCache& t,
                         const RegressionCache& c, const std::array<double, 4>& daction,
                         std::span<double> dfilm_out, GradBuffer& g);

// encode -> bbox -> trunk (injection always uses the model's own predicted
// box; target boxes only ever appear in losses).
void forward_robot(const PolicyParams& p, const FeatureImage& img,
                   const std::array<double, 5>& proprio, const Instruction& instr,
                   bool use_bbox, RobotForward& f, bool drop_context = false);
// Shared tail: trunk -> (bbox head) -> encoder. dcorners_direct carries a
// bbox-loss gradient, dfilm_out the action-head gradient.
void backward_robot(const PolicyParams& p, const RobotForward& f,
                    std::span<const double> dfilm_out,
                    const std::array<double, 4>& dcorners_direct, GradBuffer& g);

std::array<double, 4> forward_grounding(const PolicyParams& p, const FeatureImage& img,
                                        int name_id);

// ---- diffusion head -----------------------------------------------------------

struct DiffusionSchedule {
    int steps = 0;
    std::vector<double> beta, alpha, alpha_bar;  // index t in [1, T]; alpha_bar[0] = 1

    DiffusionSchedule(int steps, double beta_lo, double beta_hi);
};

// Interleaved sin/cos features of t/T.
void time_features(int t, int steps, int dim, std::span<double> out);

struct DenoiserCache {
    std::vector<double> input;  // [4 + t_emb + h + 4]
    std::vector<double> h_pre, h_act;
    std::array<double, 4> eps_hat{};
    int t = 0;
};

void denoiser_forward(const PolicyParams& p, const std::array<double, 4>& noisy, int t,
                      std::span<const double> cond, const std::array<double, 4>& box,
                      DenoiserCache& c);
void denoiser_backward(const PolicyParams& p, const DenoiserCache& c,
                       const std::array<double, 4>& deps, std::span<double> dcond,
                       std::array<double, 4>& dbox, GradBuffer& g);

struct DiffusionLossCache {
    DenoiserCache den;
    std::array<double, 4> eps{};
    std::array<double, 4> deps{};  // MSE gradient wrt eps_hat
};

// t ~ U{1..T}, eps ~ N(0, I); loss = MSE(eps_hat(a_t, t, cond, box), eps).
double diffusion_loss_forward(const PolicyParams& p, const TrunkCache& trunk,
                              const std::array<double, 4>& box_for_denoiser,
                              const std::array<double, 4>& clean_action, Rng& rng,
                              DiffusionLossCache& c);
void diffusion_loss_backward(const PolicyParams& p, const DiffusionLossCache& c,
                             std::span<double> dcond, std::array<double, 4>& dbox,
                             GradBuffer& g);

using EpsModel =
    std::function<std::array<double, 4>(const std::array<double, 4>& noisy, int t)>;

// Ancestral denoising from a_T ~ N(0, I) down to a_0; final clamp to [-1,1].
// inject_noise=false zeroes the per-step noise (used by the oracle check).
std::array<double, 4> ancestral_sample(const DiffusionSchedule& sched,
                                       const EpsModel& eps_model, Rng& rng,
                                       bool inject_noise = true);

std::array<double, 4> diffusion_sample(const PolicyParams& p, const TrunkCache& trunk,
                                       const std::array<double, 4>& box_for_denoiser,
                                       Rng& rng);

}  // namespace objbridge

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "objbridge/dataset.h"
#include "objbridge/policy.h"

namespace objbridge {

enum class Ablation { full, no_bbox, robot_only };

const char* ablation_name(Ablation a);
Ablation ablation_from_name(const std::string& s);

struct TrainConfig {
    int steps = 3000;
    int batch_size = 32;
    double lr = 1e-3;
    int ratio_robot = 10;
    int ratio_vl = 1;
    double lambda_bbox = 1.0;
    double lambda_act = 1.0;
    Ablation ablation = Ablation::full;
    std::uint64_t seed = 0;
    int log_every = 50;

    bool operator==(const TrainConfig&) const = default;
};

// Per-sample losses. Gradients accumulate into `g`; the returned parts are
// the un-weighted action/bbox terms (the optimized total applies the
// lambdas). The metrics log reports the action part.
struct LossParts {
    double total = 0.0;
    double action = 0.0;
    double bbox = 0.0;
};

// full: MSE(predicted box, dequantized target). no_bbox: presence BCE with a
// positive encode of the sample's name and a negative encode of a uniformly
// drawn other real name. robot_only: never called (configuration error).
double loss_vl(const PolicyParams& p, const GroundingSample& sample, Ablation ablation,
               int n_real_names, Rng& rng, GradBuffer& g);

LossParts loss_robot(const PolicyParams& p, const RobotStep& step, Ablation ablation,
                     const TrainConfig& cfg, Rng& rng, GradBuffer& g);

struct BatchStats {
    double loss_vl_sum = 0.0;
    double loss_robot_total_sum = 0.0;
    double loss_robot_action_sum = 0.0;
    int n_vl = 0;
    int n_robot = 0;
};

// Evaluates every element of the batch into per-element gradient buffers
// (possibly in parallel), then reduces them into p.grad in element order so
// the result is bit-identical to the serial path.
BatchStats accumulate_batch(PolicyParams& p, const HybridCorpus& corpus,
                            const HybridBatch& batch, const TrainConfig& cfg,
                            std::int64_t global_step,
                            std::vector<GradBuffer>& workspace, Parallelism par);

struct MetricsRow {
    std::int64_t step = 0;
    double loss_vl = 0.0;
    double loss_robot = 0.0;  // action term, averaged over the window
    double probe_iou = 0.0;
};

void save_metrics_csv(const std::vector<MetricsRow>& rows, const std::string& path);

struct Checkpoint {
    ModelConfig model;
    TrainConfig train;
    std::int64_t step = 0;
    PolicyParams params;
    AdamState adam;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);
// Guard for wiring mistakes such as evaluating a diffusion checkpoint with a
// regression-head harness.
void require_head(const Checkpoint& ckpt, ModelConfig::Head head);

std::uint64_t file_hash(const std::string& path);  // FNV-1a over the bytes

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<MetricsRow> log;
};

// Co-training over the hybrid stream. probe: held-out grounding samples whose
// mean IoU is logged every log_every steps. vocab (when given) imprints the
// base name embeddings before the first step — every configuration of an
// ablation starts from the same pretrained-style alignment.
TrainResult train(const ModelConfig& model_cfg, const TrainConfig& cfg,
                  const HybridCorpus& corpus, const std::vector<GroundingSample>& probe,
                  Parallelism par = Parallelism::serial,
                  const std::vector<ObjectSpec>& vocab = {});

double probe_mean_iou(const PolicyParams& p, const std::vector<GroundingSample>& probe,
                      Parallelism par = Parallelism::serial);

// One pass over the new grounding data only, at lr * lr_scale, after seeding
// the reserved name embeddings by feature imprinting from the new samples
// (a couple of optimizer steps cannot train a random embedding from scratch;
// imprinting stands in for the pretrained backbone's prior name knowledge).
Checkpoint continual_finetune(const Checkpoint& ckpt,
                              const std::vector<GroundingSample>& new_vl, int epochs = 1,
                              double lr_scale = 0.1, std::uint64_t seed = 1,
                              Parallelism par = Parallelism::serial);

}  // namespace objbridge

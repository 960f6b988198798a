#pragma once

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "recondet/image.hpp"
#include "recondet/layers.hpp"
#include "recondet/rng.hpp"

namespace recondet {

// Global class-index convention; report columns follow the same order.
enum class Family : int { real = 0, gan = 1, dm = 2 };

const char* family_name(Family f);

enum class InputMode {
  cascade_multi,   // (X, X_RG, X_RD), 9 channels
  cascade_gan,     // (X, X_RG), 6
  cascade_dm,      // (X, X_RD), 6
  residual_multi,  // (|X-X_RG|, |X-X_RD|), 6
  residual_gan,    // |X-X_RG|, 3
  residual_dm,     // |X-X_RD|, 3
};

InputMode parse_input_mode(const std::string& name);
const char* input_mode_name(InputMode mode);
const std::vector<InputMode>& all_input_modes();
int input_channels(InputMode mode);

// Which reconstructions a mode consumes; callers skip loading the rest.
bool mode_uses_gan(InputMode mode);
bool mode_uses_dm(InputMode mode);

// Stacks the classifier input planes for one image. Modes that skip a
// reconstruction ignore the corresponding argument.
nn::Tensor build_input(const Image& x, const Image& x_rg, const Image& x_rd, InputMode mode);
nn::Tensor build_input_batch(const std::vector<Image>& x, const std::vector<Image>& x_rg,
                             const std::vector<Image>& x_rd, InputMode mode);

// Max-subtraction softmax over one logit triple, in double.
std::array<double, 3> softmax3(const std::array<double, 3>& logits);
// Lowest index wins ties.
int argmax3(const std::array<double, 3>& probs);

// Loss of a single prediction given the true class index. Probabilities must
// sum to 1 within 1e-6; each entry is floored at 1e-12 inside the log.
double ternary_cross_entropy(int label, const std::array<double, 3>& probs);

// Mean softmax cross-entropy over a batch of logits (n, 3). When dlogits is
// non-null it receives (softmax - onehot) / n.
double cross_entropy_batch(const nn::Tensor& logits, const std::vector<int>& labels,
                           nn::Tensor* dlogits);

struct DetectorConfig {
  InputMode mode = InputMode::cascade_multi;
  std::string backbone = "small";  // "small" | "resnet50"
  int image_size = 32;

  void validate() const;
};

namespace detail {

// Pre-activation residual block for the small backbone.
struct DetBlock {
  nn::GroupNorm gn1, gn2;
  nn::ReLU act1, act2;
  nn::Conv2d conv1, conv2;
  std::unique_ptr<nn::Conv2d> skip;  // 1x1 when channel counts differ

  DetBlock(const std::string& name, int cin, int cout, Rng& rng);
  nn::Tensor forward(const nn::Tensor& x, bool train);
  nn::Tensor backward(const nn::Tensor& dy);
  void collect(std::vector<nn::Param*>& out);
};

// Post-activation bottleneck for the ResNet-50 backbone.
struct Bottleneck {
  nn::Conv2d conv1, conv2, conv3;
  nn::GroupNorm gn1, gn2, gn3;
  nn::ReLU act1, act2, act3;
  std::unique_ptr<nn::Conv2d> proj;
  std::unique_ptr<nn::GroupNorm> proj_gn;

  Bottleneck(const std::string& name, int cin, int width, int cout, int stride, Rng& rng);
  nn::Tensor forward(const nn::Tensor& x, bool train);
  nn::Tensor backward(const nn::Tensor& dy);
  void collect(std::vector<nn::Param*>& out);
};

}  // namespace detail

// Three-class CNN over stacked image planes. The trunk ends in global
// average pooling; those pooled activations are the exported features.
class Detector {
 public:
  Detector(const DetectorConfig& cfg, std::uint64_t seed);

  nn::Tensor logits(const nn::Tensor& x, bool train);  // (n, 3)
  nn::Tensor features(const nn::Tensor& x);            // (n, feature_dim)
  nn::Tensor backward(const nn::Tensor& dlogits);
  std::vector<nn::Param*> params();

  int feature_dim() const { return feature_dim_; }
  const DetectorConfig& config() const { return cfg_; }

  void save(const std::string& path, std::uint64_t seed);
  static Detector load(const std::string& path);

 private:
  Detector(const DetectorConfig& cfg, Rng rng);
  nn::Tensor trunk(const nn::Tensor& x, bool train);
  nn::Tensor trunk_backward(const nn::Tensor& dfeat);

  DetectorConfig cfg_;
  int feature_dim_ = 0;
  nn::Conv2d stem_;
  std::vector<detail::DetBlock> blocks_;        // small backbone
  std::vector<nn::Conv2d> downs_;               // small backbone stage strides
  std::vector<detail::Bottleneck> bottlenecks_; // resnet50 backbone
  std::unique_ptr<nn::GroupNorm> stem_gn_;      // resnet50
  std::unique_ptr<nn::ReLU> stem_act_;          // resnet50
  nn::GroupNorm out_gn_;
  nn::ReLU out_act_;
  nn::GlobalAvgPool pool_;
  nn::Linear head_;
};

struct DetectorTrainConfig {
  int epochs = 10;
  int batch_size = 32;
  double lr = 1e-3;
  int log_every = 50;  // steps between recorded batch losses
};

struct DetectorTrainLog {
  std::vector<std::pair<int, double>> losses;  // (global step, batch loss)
  std::vector<double> epoch_accuracy;          // training accuracy per epoch
  double final_loss = 0.0;
};

// Minimizes the ternary cross-entropy over (x, labels) with Adam. Labels use
// the Family convention. The set must contain all three classes.
DetectorTrainLog train_detector(Detector& det, const nn::Tensor& x,
                                const std::vector<int>& labels, const DetectorTrainConfig& tc,
                                std::uint64_t seed);

struct DetectorPrediction {
  std::vector<std::array<double, 3>> probs;
  std::vector<int> label;
};

DetectorPrediction predict(Detector& det, const nn::Tensor& x);

}  // namespace recondet

#pragma once

#include <functional>
#include <map>
#include <string>

#include "heterolora/adapters.hpp"
#include "heterolora/tensor.hpp"

namespace heterolora {

class Model;

enum class Proxy { Constant, Snip, Synflow, GradNorm };
enum class Basis { Decomposed, Merged };

const char* proxy_name(Proxy p);
Proxy proxy_from_name(const std::string& name);
const char* basis_name(Basis b);
Basis basis_from_name(const std::string& name);

struct SaliencyScore {
    ModuleId module;
    double value = 0.0;
    Proxy proxy = Proxy::Constant;
    Basis basis = Basis::Decomposed;
    int batch_budget = 0;
};

using ScoreMap = std::map<ModuleId, SaliencyScore>;

// Builds the loss for data batch `index` on the active tape. Scoring draws
// indices [0, batch_budget); the caller anchors them into its data stream.
using BatchLossFn = std::function<Tensor(int index)>;

// All proxies score with every installed module temporarily enabled (a
// module must receive gradient flow to be rankable) and restore enablement,
// gradients, and parameters before returning.

// s(theta) = |theta . dL/dtheta| per parameter, averaged over the batch
// budget. Decomposed sums over the entries of A and B; merged takes the
// gradients with respect to a leaf W' = W0 + (alpha/r) A B.
ScoreMap snip_scores(Model& model, const BatchLossFn& loss_fn, int batch_budget, Basis basis);

// Same score through the mask-gradient formulation dL/dc at C = 1; kept as
// an independent route for the SNIP identity check.
ScoreMap snip_scores_mask_route(Model& model, const BatchLossFn& loss_fn, int batch_budget);

// Data-free: weights replaced by their absolute values, an all-ones input is
// fed at the embedding level, R = sum of logits, s(theta) = theta . dR/dtheta
// with the original-signed parameters. Weights are restored bit-exactly.
ScoreMap synflow_scores(Model& model, Basis basis);

// S(M) = ||dL/dA||_2 + ||dL/dB||_2 of the mean loss over the batch budget.
ScoreMap gradnorm_scores(Model& model, const BatchLossFn& loss_fn, int batch_budget);

// 1 for every installed module: the uniform-random allocation baseline.
ScoreMap constant_scores(const AdapterRegistry& registry);

ScoreMap compute_scores(Model& model, Proxy proxy, Basis basis, const BatchLossFn& loss_fn,
                        int batch_budget);

}  // namespace heterolora

#pragma once

// Serial and dense reference implementations of the block-Newton kernels.
// They exist to check the parallel partitioned code and to benchmark against;
// the dense routines allocate the full Hessian and are only meant for small n.

#include "panelboot/block_newton.hpp"

namespace panelboot::reference {

// Same blocks as panelboot::assemble, computed in one serial pass.
BlockScoreHessian assemble_serial(const Model& model, const PanelDataset& data, const ParameterPoint& theta);

// Full score vector and Hessian in the flattened (phi, eta_1, ..., eta_n) order.
Vec dense_score(const BlockScoreHessian& b);
Mat dense_hessian(const BlockScoreHessian& b);

// -H^-1 s by a dense LU solve of the full Hessian, flattened.
Vec dense_newton_direction(const BlockScoreHessian& b);

}  // namespace panelboot::reference

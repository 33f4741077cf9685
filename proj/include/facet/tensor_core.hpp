#pragma once

#include "facet/attention.hpp"
#include "facet/checkpoint.hpp"
#include "facet/conv.hpp"
#include "facet/gradcheck.hpp"
#include "facet/layers.hpp"
#include "facet/norm.hpp"
#include "facet/ops.hpp"
#include "facet/optim.hpp"
#include "facet/rng.hpp"
#include "facet/tensor.hpp"

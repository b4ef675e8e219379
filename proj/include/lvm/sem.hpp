#pragma once

#include "lvm/sem/estimate.hpp"
#include "lvm/sem/fit_indices.hpp"
#include "lvm/sem/model.hpp"

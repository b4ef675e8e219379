#pragma once

#include "lvm/efa/bootstrap.hpp"
#include "lvm/efa/minres.hpp"
#include "lvm/efa/parallel.hpp"
#include "lvm/efa/prune.hpp"
#include "lvm/efa/rotation.hpp"
#include "lvm/efa/solution.hpp"

#pragma once

#include "mpmae/core/ops_basic.hpp"
#include "mpmae/core/ops_conv.hpp"
#include "mpmae/core/ops_loss.hpp"
#include "mpmae/core/ops_shape.hpp"

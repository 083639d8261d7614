#pragma once

#include "vgat/clustering.hpp"
#include "vgat/dataio.hpp"
#include "vgat/encoders.hpp"
#include "vgat/ese.hpp"
#include "vgat/gradcheck.hpp"
#include "vgat/gradsuite.hpp"
#include "vgat/metrics.hpp"
#include "vgat/model.hpp"
#include "vgat/optim.hpp"
#include "vgat/pipeline.hpp"
#include "vgat/survival.hpp"
#include "vgat/vga.hpp"

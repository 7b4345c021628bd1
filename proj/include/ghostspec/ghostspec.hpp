#pragma once

#include "ghostspec/error.hpp"
#include "ghostspec/matrix.hpp"
#include "ghostspec/dtype.hpp"
#include "ghostspec/checkpoint.hpp"
#include "ghostspec/layout.hpp"
#include "ghostspec/spectral.hpp"
#include "ghostspec/fingerprint.hpp"
#include "ghostspec/alignment.hpp"
#include "ghostspec/similarity.hpp"
#include "ghostspec/transforms.hpp"
#include "ghostspec/evalkit.hpp"

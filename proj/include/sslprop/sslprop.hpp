#pragma once

#include "sslprop/composition.hpp"
#include "sslprop/dataset.hpp"
#include "sslprop/error.hpp"
#include "sslprop/external_backend.hpp"
#include "sslprop/fsl.hpp"
#include "sslprop/metrics.hpp"
#include "sslprop/mvol.hpp"
#include "sslprop/parallel.hpp"
#include "sslprop/reference_backends.hpp"
#include "sslprop/resize.hpp"
#include "sslprop/run_config.hpp"
#include "sslprop/segmenter.hpp"
#include "sslprop/splitmix.hpp"
#include "sslprop/store.hpp"
#include "sslprop/synthetic.hpp"
#include "sslprop/tffs.hpp"
#include "sslprop/volume.hpp"

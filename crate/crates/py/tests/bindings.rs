use std::ffi::CString;
use std::sync::Once;

use pyo3::prelude::*;
use stmamba_py::stmamba_module;

fn python<R>(f: impl FnOnce(Python<'_>) -> R) -> R {
    static INIT: Once = Once::new();
    INIT.call_once(|| {
        pyo3::append_to_inittab!(stmamba_module);
        Python::initialize();
    });
    Python::attach(f)
}

fn run(code: &str) {
    python(|py| {
        let code = CString::new(code).unwrap();
        if let Err(e) = py.run(&code, None, None) {
            e.print(py);
            panic!("python snippet failed: {e}");
        }
    });
}

#[test]
fn smoke_script_passes_in_embedded_interpreter() {
    let script = include_str!("../../../python/smoke_test.py").replace("if __name__ == \"__main__\":", "if True:");
    run(&script);
}

#[test]
fn errors_map_to_python_exceptions() {
    run(r#"
import stmamba
for call, exc in [
    (lambda: stmamba.ModelConfig(3, 64, 2, ablation="both"), ValueError),
    (lambda: stmamba.TrialSet.read("/nonexistent/x.eta"), OSError),
    (lambda: stmamba.Tensor([1.0, 2.0], [3]), ValueError),
    (lambda: stmamba.sliding_pool(stmamba.Tensor([0.0] * 4, [1, 1, 1, 4]), "max", 2, 1), ValueError),
]:
    try:
        call()
    except exc:
        pass
    else:
        raise AssertionError(f"expected {exc.__name__}")
"#);
}

#[test]
fn config_round_trips_through_json() {
    run(r#"
import stmamba
cfg = stmamba.ModelConfig.bci2a().with_ablation("spatial")
back = stmamba.ModelConfig.from_json(cfg.to_json())
assert (back.n_channels, back.n_samples, back.n_classes, back.ablation) == (22, 960, 4, "spatial_only")
assert stmamba.STMambaNet(back).num_parameters() < stmamba.STMambaNet(stmamba.ModelConfig.bci2a()).num_parameters()
"#);
}

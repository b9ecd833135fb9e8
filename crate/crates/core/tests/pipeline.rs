use dpnmf::data::{self, contaminate, load_matrix, save_dense_csv, synth_lowrank};
use dpnmf::{fit, masked_rmse, objective_value, Coefficients, Dictionary, Hyperparams};
use tempfile::TempDir;

#[test]
fn csv_fit_save_reload() {
    let tmp = TempDir::new().unwrap();
    let (v, _, _) = synth_lowrank(12, 60, 3, 4).unwrap();
    let path = tmp.path().join("v.csv");
    save_dense_csv(&path, v.values()).unwrap();
    let loaded = load_matrix(&path).unwrap();
    assert_eq!(loaded.values(), v.values());

    let hp = Hyperparams {
        eta_h: 20.0,
        eta_w: 1.0,
        outer_iters: 100,
        ..Hyperparams::new(3)
    };
    let out = fit(&loaded, &hp, Some(&loaded)).unwrap();
    save_dense_csv(tmp.path().join("w.csv"), out.w.values()).unwrap();
    save_dense_csv(tmp.path().join("h.csv"), out.h.values()).unwrap();
    let w = Dictionary::new(data::load_real_csv(tmp.path().join("w.csv")).unwrap()).unwrap();
    let h = Coefficients::new(data::load_real_csv(tmp.path().join("h.csv")).unwrap()).unwrap();

    let obj = objective_value(&v, &w, &h).unwrap();
    assert_eq!(obj, out.trajectory.last().unwrap().objective.unwrap());

    // Full-mask RMSE and the objective describe the same residual.
    let full = dpnmf::ndarray::Array2::from_elem(v.values().dim(), true);
    let rmse = masked_rmse(v.values(), &w.values().dot(h.values()), &full).unwrap();
    let n_obs = full.len() as f64;
    assert!((rmse * rmse * n_obs - 2.0 * v.n() as f64 * obj).abs() < 1e-10);
}

#[test]
fn coordinate_and_dense_agree() {
    let tmp = TempDir::new().unwrap();
    let (v, _, _) = synth_lowrank(5, 7, 2, 8).unwrap();
    let (dirty, _) = contaminate(&v, 0.5, 0.5, 1).unwrap();
    let mut text = String::from("% generated\n");
    let nnz = dirty.values().iter().filter(|&&x| x != 0.0).count();
    text += &format!("5 7 {nnz}\n");
    for ((i, j), &x) in dirty.values().indexed_iter() {
        if x != 0.0 {
            text += &format!("{} {} {x}\n", i + 1, j + 1);
        }
    }
    let mtx = tmp.path().join("v.mtx");
    std::fs::write(&mtx, text).unwrap();
    assert_eq!(load_matrix(&mtx).unwrap().values(), dirty.values());
}

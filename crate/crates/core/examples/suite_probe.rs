use vagnet_core::gradcheck::full_suite;
fn main() {
    let t0 = std::time::Instant::now();
    for r in full_suite(None).unwrap() {
        println!("{:28} rel_err {:.3e} tol {:.0e} coords {:3} {}", r.name, r.max_rel_err, r.tol, r.coords_checked, if r.passed() { "PASS" } else { "FAIL" });
    }
    println!("total {:?}", t0.elapsed());
}

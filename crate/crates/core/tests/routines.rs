use ska_shmem::measure::{run_measurement, sync_clocks, MeasureEnv, MeasurementRecord};
use ska_shmem::routines::{self, Participants};
use ska_shmem::runtime::MIB;
use ska_shmem::{ClockModel, CostModel, Error, ProgressMode, World, WorldConfig};

const A: f64 = 1e-6;
const B: f64 = 1e-9;
const G: f64 = 2e-7;
const Q: f64 = 5e-7;

fn costs() -> CostModel {
    CostModel {
        alpha: A,
        beta: B,
        gamma: G,
        quiet: Q,
    }
}

fn c(n: usize) -> f64 {
    A + B * n as f64
}

fn run(
    npes: usize,
    progress: ProgressMode,
    name: &str,
    args: &[i64],
) -> Result<MeasurementRecord, Error> {
    let cfg = WorldConfig::new(npes)
        .heap_size(16 * MIB)
        .clock(ClockModel::virtual_clock(costs()))
        .progress(progress);
    let def = routines::lookup(name).expect("registered");
    let out = World::run(cfg, |pe| {
        let sync = sync_clocks(pe);
        let env = MeasureEnv {
            sync: &sync,
            skampi_buffer: MIB,
            seed: 42,
        };
        run_measurement(pe, def, args, &env, 0, name, 1.0)
    })?;
    let mut it = out.into_iter();
    let first = it.next().unwrap();
    for other in it {
        other?;
    }
    first.map(|r| r.expect("PE 0 returns the record"))
}

fn per_iter(npes: usize, progress: ProgressMode, name: &str, args: &[i64]) -> f64 {
    run(npes, progress, name, args)
        .unwrap_or_else(|e| panic!("{name}: {e}"))
        .headline()
}

fn assert_close(name: &str, got: f64, want: f64) {
    let rel = ((got - want) / want).abs();
    assert!(
        rel <= 1e-9,
        "{name}: got {got:e}, want {want:e} (rel {rel:e})"
    );
}

const BOTH: [ProgressMode; 2] = [ProgressMode::Async, ProgressMode::QuietOnly];

#[test]
fn put_family_closed_forms() {
    for mode in BOTH {
        assert_close(
            "Put_Simple",
            per_iter(2, mode, "Shmem_Put_Simple", &[1000, 5]),
            c(1000),
        );
        assert_close(
            "Pingpong",
            per_iter(2, mode, "Shmem_Pingpong_Put_Put", &[100, 5]),
            c(100),
        );
        assert_close(
            "Put_Round",
            per_iter(4, mode, "Shmem_Put_Round", &[64, 5]),
            c(64),
        );
        assert_close(
            "Put_Full",
            per_iter(4, mode, "Shmem_Put_Full", &[64, 5]),
            c(64) + Q,
        );
        assert_close(
            "Iput_Round",
            per_iter(3, mode, "Shmem_Iput_Round", &[4, 16, 5]),
            c(32),
        );
        assert_close("P_Simple", per_iter(2, mode, "Shmem_P_Simple", &[5]), c(8));
        assert_close("P_Round", per_iter(3, mode, "Shmem_P_Round", &[5]), c(8));
    }
}

#[test]
fn calibration_field_marks_calibrated_variants() {
    for r in routines::registry() {
        let name = r.name;
        if !(name.starts_with("Shmem_Put")
            || name.starts_with("Shmem_P_")
            || name.starts_with("Shmem_Iput")
            || name.starts_with("Shmem_Pingpong")
            || name.starts_with("Shmem_Get")
            || name.starts_with("Shmem_G_")
            || name.starts_with("Shmem_Iget"))
        {
            continue;
        }
        let args: Vec<i64> = match r.arity() {
            1 => vec![3],
            2 => vec![16, 3],
            _ => vec![4, 2, 3],
        };
        let rec = run(2, ProgressMode::QuietOnly, name, &args).unwrap();
        let want = if r.calibrated { Q } else { 0.0 };
        assert!(
            (rec.calibration - want).abs() < 1e-15,
            "{name}: calibration {}",
            rec.calibration
        );
    }
}

#[test]
fn nbi_put_closed_forms() {
    let q = ProgressMode::QuietOnly;
    assert_close(
        "Post",
        per_iter(2, q, "Shmem_Put_Nonblocking_Post", &[1000, 5]),
        G,
    );
    assert_close(
        "Quiet",
        per_iter(2, q, "Shmem_Put_Nonblocking_Quiet", &[1000, 5]),
        c(1000) + Q,
    );
    assert_close(
        "Full",
        per_iter(2, q, "Shmem_Put_Nonblocking_Full", &[1000, 5]),
        G + c(1000) + Q,
    );
    assert_close(
        "Post async",
        per_iter(
            2,
            ProgressMode::Async,
            "Shmem_Put_Nonblocking_Post",
            &[1000, 5],
        ),
        G,
    );
}

#[test]
fn overlap_distinguishes_progress_modes() {
    for name in [
        "Shmem_Put_Nonblocking_Overlap",
        "Shmem_Get_Nonblocking_Overlap",
    ] {
        let asy = run(2, ProgressMode::Async, name, &[10000, 5]).unwrap();
        assert_close(name, asy.headline(), Q);
        assert!((asy.overlap_ratio().unwrap() - 1.0).abs() < 0.01);
        let qo = run(2, ProgressMode::QuietOnly, name, &[10000, 5]).unwrap();
        assert_close(name, qo.headline(), Q + c(10000));
        assert!(qo.overlap_ratio().unwrap().abs() < 0.01);
        assert_eq!(qo.calibration, 0.0);
    }
}

#[test]
fn get_family_closed_forms() {
    for mode in BOTH {
        assert_close(
            "Get_Simple",
            per_iter(2, mode, "Shmem_Get_Simple", &[1000, 5]),
            c(1000),
        );
        assert_close(
            "Get_Round",
            per_iter(3, mode, "Shmem_Get_Round", &[10, 5]),
            c(10),
        );
        assert_close(
            "Iget_Round",
            per_iter(3, mode, "Shmem_Iget_Round", &[4, 16, 5]),
            c(32),
        );
        assert_close("G_Simple", per_iter(2, mode, "Shmem_G_Simple", &[5]), c(8));
        assert_close("G_Round", per_iter(4, mode, "Shmem_G_Round", &[5]), c(8));
        assert_close(
            "Get_Post",
            per_iter(2, mode, "Shmem_Get_Nonblocking_Post", &[100, 5]),
            G,
        );
    }
    let q = ProgressMode::QuietOnly;
    assert_close(
        "Get_Quiet",
        per_iter(2, q, "Shmem_Get_Nonblocking_Quiet", &[100, 5]),
        c(100) + Q,
    );
    assert_close(
        "Get_Full",
        per_iter(2, q, "Shmem_Get_Nonblocking_Full", &[100, 5]),
        G + c(100) + Q,
    );
}

#[test]
fn measuring_masks() {
    let rec = run(4, ProgressMode::Async, "Shmem_Put_Simple", &[8, 2]).unwrap();
    assert_eq!(rec.per_pe.iter().map(|s| s.pe).collect::<Vec<_>>(), vec![0]);
    let rec = run(4, ProgressMode::Async, "Shmem_Pingpong_Put_Put", &[8, 2]).unwrap();
    assert_eq!(
        rec.per_pe.iter().map(|s| s.pe).collect::<Vec<_>>(),
        vec![0, 1]
    );
    let rec = run(4, ProgressMode::Async, "Shmem_Put_Round", &[8, 2]).unwrap();
    assert_eq!(rec.per_pe.len(), 4);
    let rec = run(8, ProgressMode::Async, "Shmem_Barrier_Half", &[]).unwrap();
    assert_eq!(
        rec.per_pe.iter().map(|s| s.pe).collect::<Vec<_>>(),
        vec![0, 1, 2, 3]
    );
}

#[test]
fn broadcast_closed_forms() {
    for mode in BOTH {
        assert_close(
            "Bcast_All",
            per_iter(4, mode, "Shmem_Bcast_All", &[100, 0]),
            2.0 * c(100),
        );
        assert_close(
            "Bcast_Synchro",
            per_iter(4, mode, "Shmem_Bcast_All_Synchro", &[100, 0]),
            2.0 * c(100),
        );
        assert_eq!(per_iter(1, mode, "Shmem_Bcast_All", &[100, 0]), 0.0);
        assert_close(
            "Rounds",
            per_iter(2, mode, "Bcast_All_Rounds", &[100, 1]),
            c(100),
        );
    }
    let sk = per_iter(4, ProgressMode::Async, "Shmem_Bcast_All_SK", &[100, 0]);
    assert!(sk > 0.0 && sk <= 2.0 * c(100) + 1e-15, "SK {sk:e}");
    let err = run(2, ProgressMode::Async, "Shmem_Bcast_All", &[8, 2]).unwrap_err();
    assert!(err.to_string().contains("root"), "{err}");
}

#[test]
fn barrier_cost_is_rounds_of_small_messages() {
    for (npes, rounds) in [(1, 0.0), (2, 1.0), (4, 2.0), (5, 3.0), (8, 3.0)] {
        for name in [
            "Shmem_Barrier",
            "Shmem_Sync",
            "Shmem_Barrier_Consecutive",
            "Shmem_Sync_Consecutive",
        ] {
            let args: &[i64] = if name.ends_with("Consecutive") {
                &[4]
            } else {
                &[]
            };
            let got = per_iter(npes, ProgressMode::Async, name, args);
            assert!(
                (got - rounds * c(8)).abs() < 1e-15,
                "{name} npes={npes}: {got:e}"
            );
        }
    }
    let half = per_iter(8, ProgressMode::Async, "Shmem_Sync_Half", &[]);
    assert!((half - 2.0 * c(8)).abs() < 1e-15);
}

#[test]
fn collective_variants_run_and_barrier_subtraction_is_close() {
    for name in [
        "Shmem_Reduce_And",
        "Shmem_Collect",
        "Shmem_Fcollect",
        "Shmem_Alltoall",
        "Shmem_Alltoalls",
    ] {
        for npes in [1, 2, 4] {
            let cons = per_iter(
                npes,
                ProgressMode::Async,
                &format!("{name}_Consecutive"),
                &[4, 7],
            );
            let bar = per_iter(
                npes,
                ProgressMode::Async,
                &format!("{name}_Barrier"),
                &[4, 7],
            );
            let syn = per_iter(npes, ProgressMode::Async, &format!("{name}_Synchro"), &[7]);
            if npes == 1 {
                assert_eq!((cons, bar, syn), (0.0, 0.0, 0.0), "{name}");
            } else {
                assert!(cons > 0.0 && syn > 0.0, "{name}");
                assert!(
                    (bar - cons).abs() <= 0.5 * cons,
                    "{name} npes={npes}: barrier {bar:e} vs consecutive {cons:e}"
                );
            }
        }
    }
}

#[test]
fn memory_and_context_routines() {
    for (name, args) in [
        ("Shmem_Malloc", vec![4, 100]),
        ("Shmem_Free", vec![4]),
        ("Shmem_Realloc", vec![4, 64]),
        ("Shmem_Align", vec![4, 100]),
        ("Shmem_Calloc", vec![4, 3, 10]),
    ] {
        let got = per_iter(4, ProgressMode::Async, name, &args);
        assert!(got >= 0.0, "{name}");
    }
    let malloc = per_iter(4, ProgressMode::Async, "Shmem_Malloc", &[4, 100]);
    assert!((malloc - 2.0 * c(8)).abs() < 1e-15, "malloc {malloc:e}");
    assert!(run(2, ProgressMode::Async, "Shmem_Realloc", &[4, 1]).is_err());
    for name in [
        "Shmem_Ctx_Create_Serialized",
        "Shmem_Ctx_Destroy_Serialized",
        "Shmem_Ctx_Create_Private",
        "Shmem_Ctx_Destroy_Private",
        "Shmem_Ctx_Create_Nostore",
        "Shmem_Ctx_Destroy_Nostore",
    ] {
        assert_close(name, per_iter(2, ProgressMode::Async, name, &[]), G);
    }
}

#[test]
fn ordering_routines() {
    for mode in BOTH {
        assert_close("Quiet", per_iter(2, mode, "Shmem_Quiet", &[10]), Q);
        assert_close("Fence", per_iter(2, mode, "Shmem_Fence", &[10]), G);
        assert_close("Test", per_iter(2, mode, "Shmem_Test", &[10]), G);
        assert_close(
            "Wait_Until",
            per_iter(3, mode, "Shmem_Wait_Until", &[10]),
            c(8),
        );
        assert_close(
            "Quiet_Put",
            per_iter(2, mode, "Shmem_Quiet_Put", &[10, 100]),
            c(100) + Q,
        );
        assert_close(
            "Fence_Put",
            per_iter(2, mode, "Shmem_Fence_Put", &[10, 100]),
            G,
        );
    }
    assert!(run(1, ProgressMode::Async, "Shmem_Wait_Until", &[3]).is_err());
}

#[test]
fn lock_routines() {
    for mode in BOTH {
        assert_close("Set", per_iter(2, mode, "Shmem_Set_Lock", &[]), c(8));
        assert_close("Clear", per_iter(2, mode, "Shmem_Clear_Lock", &[]), c(8));
        for name in [
            "Shmem_Lock_Test_Busy",
            "Shmem_Lock_Test_Busy_All",
            "Shmem_Lock_Test_Busy_Turns",
            "Shmem_Lock_Test_Busy_Round",
        ] {
            assert_close(name, per_iter(4, mode, name, &[]), c(8));
        }
    }
    let rec = run(4, ProgressMode::Async, "Shmem_Lock_Test_Busy_Round", &[]).unwrap();
    assert_eq!(rec.per_pe[0].iterations, 12);
    assert!(run(1, ProgressMode::Async, "Shmem_Lock_Test_Busy", &[]).is_err());
}

#[test]
fn every_routine_runs_on_real_clock() {
    for r in routines::registry() {
        let args: Vec<i64> = match r.params {
            [] => vec![],
            ["count", "root"] => vec![16, 0],
            ["count", "stride", "iterations"] => vec![4, 2, 2],
            ["iterations", "nb", "count"] => vec![2, 2, 16],
            p if p.len() == 1 => vec![2],
            _ => vec![2, 16],
        };
        let def = routines::lookup(r.name).unwrap();
        let out = World::run(
            WorldConfig::new(3)
                .heap_size(4 * MIB)
                .progress(ProgressMode::Async),
            |pe| {
                let sync = sync_clocks(pe);
                let env = MeasureEnv {
                    sync: &sync,
                    skampi_buffer: MIB,
                    seed: 1,
                };
                run_measurement(pe, def, &args, &env, 0, r.name, 1e6)
            },
        )
        .unwrap();
        let rec = out.into_iter().next().unwrap().unwrap().unwrap();
        assert!(rec.headline() >= 0.0, "{}", r.name);
        if r.participants == Participants::Single {
            assert_eq!(rec.per_pe.len(), 1);
        }
    }
}

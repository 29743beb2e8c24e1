// Every example runs to completion with its default (small) settings.

macro_rules! example {
    ($name:ident) => {
        mod $name {
            include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/", stringify!($name), ".rs"));

            #[test]
            fn runs() {
                run_example().unwrap();
            }
        }
    };
}

example!(noise_schedule);
example!(train_denoiser);
example!(constraints);
example!(trust_schedules);
example!(trust_sampling);
example!(boundary_calibration);
example!(baselines);
example!(metrics);
example!(tasks);
example!(experiment);

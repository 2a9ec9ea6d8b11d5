//! Every example must run to completion.

macro_rules! example {
    ($name:ident, $file:literal) => {
        mod $name {
            include!($file);

            #[test]
            fn runs() {
                super::ExampleResult::into_unit(main());
            }
        }
    };
}

trait ExampleResult {
    fn into_unit(self);
}

impl ExampleResult for () {
    fn into_unit(self) {}
}

impl<E: std::fmt::Debug> ExampleResult for Result<(), E> {
    fn into_unit(self) {
        self.expect("example failed");
    }
}

example!(adapt_pretrained, "../examples/adapt_pretrained.rs");
example!(basis_ablation, "../examples/basis_ablation.rs");
example!(block_term_spectrum, "../examples/block_term_spectrum.rs");
example!(checkpoint_roundtrip, "../examples/checkpoint_roundtrip.rs");
example!(cli_complete, "../examples/cli_complete.rs");
example!(inpaint_image, "../examples/inpaint_image.rs");
example!(pointcloud_fit, "../examples/pointcloud_fit.rs");
example!(tensor_algebra, "../examples/tensor_algebra.rs");
example!(traffic_completion, "../examples/traffic_completion.rs");

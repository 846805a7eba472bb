@triton.jit
def kernel(input_ptr, output_ptr, n_elements, BLOCK_SIZE: tl.constexpr):
    pid = tl.program_id(0)
    offsets = pid * BLOCK_SIZE + tl.arange(0, BLOCK_SIZE)
    mask = offsets < n_elements
    x = tl.load(input_ptr + offsets, mask=mask, other=0)
    y = tl.exp(x.to(tl.float32))
    tl.store(output_ptr + offsets, y.to(output_ptr.dtype.element_ty), mask=mask)
